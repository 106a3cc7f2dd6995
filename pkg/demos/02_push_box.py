"""Push-box: a hand-written pusher combined with a move-to controller.

The move-to controller is either told nothing about the pusher (it just
aims for the nearest configuration where pushing takes over) or it is given
the pusher's value function as its exit reward.

Run: python demos/02_push_box.py
"""
import numpy as np

from vfcompose.experiments import push_box_roster, success_probability

roster = push_box_roster()
lay, mdp = roster.layout, roster.mdp
starts = [s for s in range(mdp.num_states) if s not in mdp.terminal]

print(f"{lay.spec.width}x{lay.spec.height} grid, pillars at {sorted(lay.spec.obstacles)}, "
      f"{mdp.num_states} states")
print(f"{'pipeline':<14}{'mean value':>12}{'success':>10}{'mean |v - v*|':>16}")
for name, sp in roster.policies.items():
    v = roster.values[name]
    p = success_probability(mdp, sp.flatten(), {lay.success})
    gap = np.mean(np.abs(v[starts] - roster.v_star[starts]))
    print(f"{name:<14}{np.mean(v[starts]):>12.4f}{np.mean(p[starts]):>10.4f}{gap:>16.5f}")

better = np.sum(roster.values["ManualVf"] > roster.values["ManualLocal"] + 1e-9)
print(f"states where the value-aware move-to helps the manual pusher: {better}")
