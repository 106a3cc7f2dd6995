"""A behaviour tree that switches between moving to the box and pushing it.

Run: python demos/04_behaviour_tree.py
"""
import json

from vfcompose.bt import bt_to_json, execute, operating_regions, push_box_tree
from vfcompose.composition import decoupled_solve
from vfcompose.envs import PushBoxLayout, PushBoxSpec, build_push_box, push_box_predicates

spec = PushBoxSpec()
mdp, part = build_push_box(spec)
lay = PushBoxLayout(spec)
tree = push_box_tree(push_box_predicates(spec))
print(json.dumps(bt_to_json(tree), indent=1))

regions = operating_regions(tree, mdp)
print({lab: len(regions[lab]) for lab in regions.order})
print("matches the environment's partition:", regions.regions == part.regions)

res = decoupled_solve(mdp, part["move_to"], part["push"] | part["done"])
pols = {"move_to": res.composed.policies["alpha"], "push": res.composed.policies["beta"]}
start = lay.state_of((0, 4), (3, 3))
traj = execute(tree, pols, mdp, start, seed=0)
for st in traj.steps:
    agent, box = lay.cells_of(st.state)
    print(f"{st.region:<8} agent {agent} box {box} -> {mdp.action_names[st.action]}")
print("reached the goal:", traj.final_state == lay.success,
      f"return {traj.total_reward:.3f}")
