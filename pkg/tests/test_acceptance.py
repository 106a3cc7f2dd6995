"""One pass/fail check per acceptance criterion.

Every expected value comes from an independent oracle: monolithic value
iteration, the brute-force finite-horizon solver, or a plain BFS written in
``conftest``.
"""
import dataclasses
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bfs_steps, cell_of
from vfcompose.bt import execute, operating_regions, push_box_tree
from vfcompose.composition import (
    compose_local,
    compose_manual_learned,
    compose_mixture,
    constrain,
    decoupled_solve,
    evaluate_switching_policy,
    recursive_compose,
    value_function_gap,
)
from vfcompose.envs import (
    CHAIN_3,
    TREE_7,
    build_region_maze,
    door_cells,
    manual_push_policy,
    push_box_predicates,
)
from vfcompose.experiments import push_box_roster
from vfcompose.mdp import Policy
from vfcompose.restriction import continuation_boundary, forbidden_boundary, restrict
from vfcompose.solvers import (
    LearnConfig,
    brute_force_optimal,
    greedy_policy,
    policy_evaluation,
    q_learning,
    value_iteration,
)

IDENTITY_TOL = 1e-8
BRUTE_TOL = 1e-9


def sup_gap(a, b, states):
    idx = sorted(states)
    return float(np.max(np.abs(np.asarray(a)[idx] - np.asarray(b)[idx])))


def walk(mdp, pol, s, limit=10_000):
    """States visited by a deterministic policy until a terminal state."""
    path = [s]
    while s not in mdp.terminal:
        s = mdp.transitions[(s, pol[s])][0].next_state
        path.append(s)
        assert len(path) < limit
    return path


# 1 ---------------------------------------------------------------------------------

@pytest.mark.parametrize("instance", ["two_rooms_A", "two_rooms_B", "push_box_6x6"])
def test_c1_decoupled_identity(instance, two_rooms_a, two_rooms_b, push_box):
    if instance == "push_box_6x6":
        _, mdp, part = push_box
        alpha, beta = part["move_to"], part["push"] | part["done"]
        horizon = 4 * 36
    else:
        mdp, part = two_rooms_a if instance.endswith("A") else two_rooms_b
        alpha, beta = part["room1"], part["room2"]
        horizon = mdp.num_states
    t0 = time.perf_counter()
    res = decoupled_solve(mdp, alpha, beta)
    elapsed = time.perf_counter() - t0
    v_mono = value_iteration(mdp).values
    assert sup_gap(res.v_composed, v_mono, range(mdp.num_states)) <= IDENTITY_TOL
    assert elapsed < 10.0
    # the oracle itself is cross-checked against exhaustive finite-horizon search
    assert sup_gap(brute_force_optimal(mdp, horizon), v_mono, range(mdp.num_states)) <= BRUTE_TOL


# 2 ---------------------------------------------------------------------------------

def test_c2_door_economics(two_rooms_spec, two_rooms_a):
    mdp, part = two_rooms_a
    free = set(two_rooms_spec.cells)
    a_cell = two_rooms_spec.target("A")
    upper, lower = door_cells(two_rooms_spec)
    assert bfs_steps(free, upper, a_cell) == 2
    assert bfs_steps(free, lower, a_cell) == 11

    room1, room2 = part["room1"], part["room2"]
    vf = decoupled_solve(mdp, room1, room2).composed.flatten()
    loc = compose_local(mdp, room1, room2).composed.flatten()
    lower_half = [s for s in room1 if cell_of(mdp.state_names[s])[1] >= 6]
    longer = []
    for s in lower_half:
        n_vf = len(walk(mdp, vf, s)) - 1
        n_loc = len(walk(mdp, loc, s)) - 1
        assert n_vf == bfs_steps(free, cell_of(mdp.state_names[s]), a_cell)
        assert n_loc >= n_vf
        if n_loc > n_vf:
            longer.append(s)
    assert longer


# 3 ---------------------------------------------------------------------------------

def test_c3_constrained_composition(crafted_push_box):
    spec, mdp, part = crafted_push_box
    alpha, beta = part["move_to"], part["push"] | part["done"]
    manual = manual_push_policy(spec)

    model = constrain(mdp, beta, manual)
    greedy = greedy_policy(model, value_iteration(model).values)
    assert [s for s in part["push"] if greedy[s] != manual[s]] == []

    v_manual_vf = evaluate_switching_policy(
        mdp, compose_manual_learned(mdp, alpha, beta, manual).composed)
    v_manual_local = evaluate_switching_policy(
        mdp, compose_local(mdp, alpha, beta, beta_policy=manual).composed)
    assert np.all(v_manual_vf >= v_manual_local - 1e-12)
    assert np.any(v_manual_vf > v_manual_local + 1e-9)
    # the instance is one where the manual pusher does fail from some handovers
    v_pusher = policy_evaluation(model, greedy)
    assert np.min(v_pusher[sorted(part["push"])]) < 0


# 4 ---------------------------------------------------------------------------------

@pytest.mark.parametrize("layout, n_regions", [(CHAIN_3, 3), (TREE_7, 7)])
def test_c4_recursive_identity(layout, n_regions):
    mdp, part, grid = build_region_maze(layout)
    assert len(part.order) == n_regions
    t0 = time.perf_counter()
    res = recursive_compose(mdp, part)
    elapsed = time.perf_counter() - t0
    v_mono = value_iteration(mdp).values
    assert sup_gap(res.v_composed, v_mono, range(mdp.num_states)) <= IDENTITY_TOL
    assert elapsed < 30.0
    # the first region only learns its distance to G through every later boundary
    (goal,) = [c for c, lab in grid.terminals.items()]
    dist = bfs_steps(set(grid.cells), goal)
    first = part[part.order[0]]
    assert all(res.v_composed[s] == -dist[cell_of(mdp.state_names[s])] for s in first)


# 5 ---------------------------------------------------------------------------------

def test_c5_mixture_matches_door_enumeration(two_rooms_spec, two_rooms_a, two_rooms_b):
    m_a, part = two_rooms_a
    m_b, _ = two_rooms_b
    room1, room2 = part["room1"], part["room2"]
    res = compose_mixture([(0.3, m_a), (0.7, m_b)], room1, room2)

    cells1 = {cell_of(m_a.state_names[s]) for s in room1}
    cells2 = {cell_of(m_a.state_names[s]) for s in room2}
    a_cell, b_cell = two_rooms_spec.target("A"), two_rooms_spec.target("B")
    doors = door_cells(two_rooms_spec)
    after = {d: 0.3 * -bfs_steps(cells2, d, a_cell) + 0.7 * -bfs_steps(cells2, d, b_cell)
             for d in doors}
    to_door = {d: bfs_steps(cells1 | {d}, d) for d in doors}

    pi_alpha = res.composed.policies["alpha"]
    for s in room1:
        c = cell_of(m_a.state_names[s])
        best = max(-to_door[d][c] + after[d] for d in doors)
        assert abs(res.v_alpha[s] - best) <= IDENTITY_TOL
        # expected return of actually running the mixture controller
        path = [s]
        while path[-1] in room1:
            path.append(m_a.transitions[(path[-1], pi_alpha[path[-1]])][0].next_state)
        door = cell_of(m_a.state_names[path[-1]])
        achieved = -(len(path) - 1) + after[door]
        assert abs(achieved - best) <= IDENTITY_TOL


# 6 ---------------------------------------------------------------------------------

def _random_region(mdp, data):
    n = mdp.num_states
    return data.draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n))


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_c6_restriction_properties(two_rooms_a, push_box, data):
    mdp = data.draw(st.sampled_from([two_rooms_a[0], push_box[1]]))
    # identity
    full = restrict(mdp, range(mdp.num_states), {})
    assert full.mdp == mdp and full.added == frozenset()
    # added states are absorbing with zero reward
    region = _random_region(mdp, data)
    rm = restrict(mdp, region, forbidden_boundary(mdp, region))
    for i in rm.added:
        (a,) = rm.mdp.available[i]
        (t,) = rm.mdp.transitions[(i, a)]
        assert (t.next_state, t.prob, t.reward) == (i, 1.0, 0.0) and i in rm.mdp.terminal
    # rewards outside the region do not reach its value under forbidden exits
    outside = sorted(set(range(mdp.num_states)) - set(region) - mdp.terminal)
    if outside:
        shift = data.draw(st.floats(-10, 10, allow_nan=False))
        trans = {k: (tuple(t._replace(reward=t.reward + shift) for t in v)
                     if k[0] in set(outside) else v) for k, v in mdp.transitions.items()}
        mutated = dataclasses.replace(mdp, transitions=trans)
        rm2 = restrict(mutated, region, forbidden_boundary(mutated, region))
        assert rm2.mdp == rm.mdp


# 7 ---------------------------------------------------------------------------------

def test_c7_q_learning_room1(two_rooms_a):
    mdp, part = two_rooms_a
    room1, room2 = part["room1"], part["room2"]
    t0 = time.perf_counter()
    bnd = continuation_boundary(mdp, room1, room2, value_iteration(mdp).values)
    learned = q_learning(mdp, room1, bnd, LearnConfig(episodes=10_000, seed=0))
    elapsed = time.perf_counter() - t0

    rm = restrict(mdp, room1, bnd)
    acts = [learned.policy[int(rm.back_map[i])] if i in rm.core else rm.mdp.available[i][0]
            for i in range(rm.mdp.num_states)]
    v_learned = policy_evaluation(rm.mdp, Policy(acts))
    v_opt = value_iteration(rm.mdp).values
    core = sorted(rm.core)
    rel = np.mean(np.abs(v_learned[core] - v_opt[core])) / np.mean(np.abs(v_opt[core]))
    assert rel <= 0.02
    assert elapsed < 60.0


# 8 ---------------------------------------------------------------------------------

def test_c8_gap_ordering(crafted_push_box):
    roster = push_box_roster()
    mdp = roster.mdp
    states = [s for s in range(mdp.num_states) if s not in mdp.terminal]
    gap = {k: value_function_gap(roster.values[k], roster.v_star, states)[0]
           for k in ("VfCompose", "LocalCompose", "ManualVf")}
    assert gap["VfCompose"] < gap["LocalCompose"]
    assert gap["VfCompose"] < gap["ManualVf"]

    # the same ordering for the move-to controller's own value estimate
    _, _, part = crafted_push_box
    alpha, beta = part["move_to"], part["push"] | part["done"]
    est = {
        "VfCompose": decoupled_solve(mdp, alpha, beta).v_alpha,
        "LocalCompose": compose_local(mdp, alpha, beta).v_alpha,
        "ManualVf": compose_manual_learned(mdp, alpha, beta,
                                           manual_push_policy(roster.layout.spec)).v_alpha,
    }
    crit = {k: value_function_gap(v, roster.v_star, alpha)[0] for k, v in est.items()}
    assert crit["VfCompose"] < crit["LocalCompose"]
    assert crit["VfCompose"] < crit["ManualVf"]


# 9 ---------------------------------------------------------------------------------

@pytest.mark.parametrize("which", ["default", "crafted"])
def test_c9_bt_consistency(which, push_box, crafted_push_box):
    spec, mdp, part = push_box if which == "default" else crafted_push_box
    tree = push_box_tree(push_box_predicates(spec))
    regions = operating_regions(tree, mdp)
    assert regions.regions == part.regions

    alpha, beta = part["move_to"], part["push"] | part["done"]
    if which == "default":
        sp = decoupled_solve(mdp, alpha, beta).composed
    else:
        sp = compose_manual_learned(mdp, alpha, beta, manual_push_policy(spec)).composed
    flat = sp.flatten()
    pols = {"move_to": sp.policies["alpha"], "push": sp.policies["beta"]}
    rng = np.random.default_rng(2024)
    starts = [s for s in range(mdp.num_states) if s not in mdp.terminal]
    visited = 0
    for _ in range(2000):
        s0 = starts[int(rng.integers(len(starts)))]
        traj = execute(tree, pols, mdp, s0, seed=rng)
        for step in traj.steps:
            assert step.action == flat[step.state]
            assert step.state in part[step.region]
        visited += len(traj)
        assert traj.terminated
    assert visited > 2000
