"""Two rooms, two doors: why the room-1 controller needs room 2's values.

Run: python demos/01_two_rooms.py
"""
import numpy as np

from vfcompose.composition import compose_local, compose_mixture, decoupled_solve, \
    evaluate_switching_policy
from vfcompose.envs import build_two_rooms, canonical_two_rooms, door_cells, render_ascii_map, \
    shortest_path_oracle
from vfcompose.io import ascii_grid
from vfcompose.solvers import value_iteration

spec = canonical_two_rooms()
print(render_ascii_map(spec))

upper, lower = door_cells(spec)
a = spec.target("A")
print(f"steps from the upper door to A: {shortest_path_oracle(spec, upper, a)}")
print(f"steps from the lower door to A: {shortest_path_oracle(spec, lower, a)}")

mdp, part = build_two_rooms(spec, "A")
room1, room2 = part["room1"], part["room2"]
v_star = value_iteration(mdp).values

local = compose_local(mdp, room1, room2)
vf = decoupled_solve(mdp, room1, room2)
v_local = evaluate_switching_policy(mdp, local.composed)
v_vf = evaluate_switching_policy(mdp, vf.composed)


def as_grid(values, region):
    arr = np.full((spec.height, spec.width), np.nan)
    for s, (x, y) in enumerate(spec.cells):
        if s in region:
            arr[y, x] = values[s]
    return arr


print("room 1, extra steps taken by the door-agnostic controller:")
print(ascii_grid(as_grid(v_star - v_local, room1), width=4, digits=0))
print(f"largest loss with local composition: {np.max(v_star - v_local):.0f} steps")
print(f"largest loss with value-function composition: {np.max(v_star - v_vf):.0f} steps")

m_b, _ = build_two_rooms(spec, "B")
mix = compose_mixture([(0.3, mdp), (0.7, m_b)], room1, room2)
print("room 1 values when the target is A with probability 0.3 and B with 0.7:")
print(ascii_grid(as_grid(mix.v_alpha, room1), width=6, digits=1))
