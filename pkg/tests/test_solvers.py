import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bfs_steps, cell_of, tiny_mdp
from vfcompose.envs import build_corridor, build_two_rooms, parse_ascii_map
from vfcompose.mdp import Mdp, Policy, Transition
from vfcompose.restriction import FORBIDDEN, continuation_boundary, restrict
from vfcompose.solvers import (
    FAIL_R,
    DivergenceError,
    LearnConfig,
    SolveConfig,
    Sweep,
    bellman_backup,
    brute_force_optimal,
    greedy_policy,
    policy_evaluation,
    q_learning,
    value_iteration,
)


@pytest.mark.parametrize("sweep", list(Sweep))
def test_corridor_values(sweep):
    res = value_iteration(build_corridor(3), SolveConfig(sweep=sweep))
    assert res.values.tolist() == [-2.0, -1.0, 0.0]
    assert res.residual <= 1e-9


def test_two_rooms_values_are_negative_bfs(two_rooms_spec, two_rooms_a):
    mdp, _ = two_rooms_a
    v = value_iteration(mdp).values
    free = set(two_rooms_spec.cells)
    dist = bfs_steps(free, two_rooms_spec.target("A"))
    for s, name in enumerate(mdp.state_names):
        assert v[s] == -dist[cell_of(name)]


def test_fixed_point_and_residual(two_rooms_spec):
    mdp, _ = build_two_rooms(dataclasses.replace(two_rooms_spec, slip=0.1), "A")
    cfg = SolveConfig()
    v = value_iteration(mdp, cfg).values
    for s in range(mdp.num_states):
        assert abs(v[s] - bellman_backup(mdp, v, s)) <= cfg.tolerance


def test_gamma_one_unreachable_terminal_raises():
    trans = {(0, 0): (Transition(0, 1.0, -1.0),), (1, 0): (Transition(1, 1.0, 0.0),)}
    mdp = Mdp(("loop", "end"), ("a",), ((0,), (0,)), trans, 1.0, frozenset({1}))
    with pytest.raises(DivergenceError):
        value_iteration(mdp)


def test_iteration_budget_raises():
    mdp = build_corridor(3, discount=0.999)
    with pytest.raises(DivergenceError):
        value_iteration(mdp, SolveConfig(max_iterations=1, sweep=Sweep.JACOBI))


def test_forbidden_is_symbolic():
    trans = {
        (0, 0): (Transition(1, 1.0, -1.0, forbidden=True),),
        (0, 1): (Transition(2, 1.0, -1000.0),),
        (1, 0): (Transition(1, 1.0, 0.0),),
        (2, 0): (Transition(2, 1.0, 0.0),),
    }
    mdp = Mdp(("s", "bad", "ok"), ("x", "y"), ((0, 1), (0,), (0,)), trans, 1.0,
              frozenset({1, 2}))
    v = value_iteration(mdp).values
    assert v[0] == -1000.0
    assert greedy_policy(mdp, v)[0] == 1

    only_bad = Mdp(("s", "bad"), ("x",), ((0,), (0,)),
                   {(0, 0): trans[(0, 0)], (1, 0): trans[(1, 0)]}, 1.0, frozenset({1}))
    v2 = value_iteration(only_bad).values
    assert v2[0] == -math.inf
    with pytest.raises(ValueError):
        greedy_policy(only_bad, v2)


def test_tie_break_lowest_action():
    trans = {(0, a): (Transition(1, 1.0, -1.0),) for a in range(3)}
    trans[(1, 0)] = (Transition(1, 1.0, 0.0),)
    mdp = Mdp(("s", "t"), ("a", "b", "c"), ((2, 0, 1), (0,)), trans, 1.0, frozenset({1}))
    assert greedy_policy(mdp, value_iteration(mdp).values)[0] == 0


def test_policy_evaluation_of_greedy_matches_optimum(two_rooms_a):
    mdp, _ = two_rooms_a
    cfg = SolveConfig()
    v = value_iteration(mdp, cfg).values
    pe = policy_evaluation(mdp, greedy_policy(mdp, v), cfg)
    assert np.max(np.abs(pe - v)) <= 10 * cfg.tolerance


def test_policy_evaluation_needs_total_policy(two_rooms_a):
    mdp, _ = two_rooms_a
    with pytest.raises(ValueError):
        policy_evaluation(mdp, Policy.from_mapping(mdp.num_states, {0: 0}))


def test_policy_evaluation_of_looping_policy_diverges():
    mdp = build_corridor(3)
    with pytest.raises(DivergenceError):
        policy_evaluation(mdp, Policy([0, 0, 0]))


def test_brute_force_examples(two_rooms_a):
    assert brute_force_optimal(build_corridor(3), 10).tolist() == [-2.0, -1.0, 0.0]
    mdp, _ = two_rooms_a
    bf = brute_force_optimal(mdp, mdp.num_states)
    assert np.max(np.abs(bf - value_iteration(mdp).values)) <= 1e-9
    with pytest.raises(ValueError):
        brute_force_optimal(mdp, 10, budget=100)


def test_push_box_matches_brute_force(push_box):
    _, mdp, _ = push_box
    bf = brute_force_optimal(mdp, 4 * 36)
    assert np.max(np.abs(bf - value_iteration(mdp).values)) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 50.0))
def test_jacobi_sweeps_monotone_from_shifted_optimum(shift):
    mdp, _ = build_two_rooms(parse_ascii_map(TINY_ROOMS, slip=0.2), "A")
    v_star = value_iteration(mdp, SolveConfig(tolerance=1e-12)).values
    init = v_star - shift
    init[list(mdp.terminal)] = 0.0
    seen = []
    value_iteration(mdp, SolveConfig(sweep=Sweep.JACOBI), init=init,
                    callback=lambda it, v: seen.append(v.copy()))
    prev = init
    for v in seen:
        assert np.all(v >= prev - 1e-9)
        prev = v


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_jacobi_sweeps_stay_pessimistic(seed):
    mdp, _ = build_two_rooms(parse_ascii_map(TINY_ROOMS, slip=0.2), "A")
    v_star = value_iteration(mdp, SolveConfig(tolerance=1e-12)).values
    rng = np.random.default_rng(seed)
    init = v_star - rng.uniform(0, 20, size=mdp.num_states)
    init[list(mdp.terminal)] = 0.0
    seen = []
    value_iteration(mdp, SolveConfig(sweep=Sweep.JACOBI), init=init,
                    callback=lambda it, v: seen.append(v.copy()))
    assert all(np.all(v <= v_star + 1e-9) for v in seen)


def test_pessimistic_start_need_not_increase_monotonically():
    mdp = build_corridor(3)
    init = np.array([-2.0, -100.0, 0.0])  # below the optimum [-2, -1, 0]
    seen = []
    value_iteration(mdp, SolveConfig(sweep=Sweep.JACOBI), init=init,
                    callback=lambda it, v: seen.append(v.copy()))
    assert seen[0][0] < init[0]
    assert seen[-1].tolist() == [-2.0, -1.0, 0.0]


TINY_ROOMS = """\
#######
#..D.A#
#..#..#
#..D.B#
#######
"""


def test_random_small_mdps_match_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n, m = 5, 2
        trans = {}
        for s in range(n - 1):
            for a in range(m):
                succ = sorted(set(rng.choice(n, size=2).tolist()))
                p = rng.dirichlet(np.ones(len(succ)))
                trans[(s, a)] = tuple(Transition(j, float(pj), float(rng.uniform(-2, 0)))
                                      for j, pj in zip(succ, p))
        # exact normalisation for the validator
        for key, outs in trans.items():
            total = sum(t.prob for t in outs)
            trans[key] = tuple(t._replace(prob=t.prob / total) for t in outs)
            diff = 1.0 - sum(t.prob for t in trans[key])
            first = trans[key][0]
            trans[key] = (first._replace(prob=first.prob + diff),) + trans[key][1:]
        trans[(n - 1, 0)] = (Transition(n - 1, 1.0, 0.0),)
        avail = tuple((0, 1) for _ in range(n - 1)) + ((0,),)
        mdp = Mdp(tuple(map(str, range(n))), ("a", "b"), avail, trans, 0.9,
                  frozenset({n - 1}))
        v = value_iteration(mdp, SolveConfig(tolerance=1e-12)).values
        bf = brute_force_optimal(mdp, 400)
        assert np.max(np.abs(v - bf)) <= 1e-9


def test_q_learning_corridor_is_close_to_value_iteration():
    mdp = build_corridor(3)
    res = q_learning(mdp, range(3), None, LearnConfig(episodes=10_000, seed=1))
    v = value_iteration(mdp).values
    assert np.max(np.abs(res.values[:2] - v[:2])) <= 0.05


def test_q_learning_is_deterministic(two_rooms_a):
    mdp, part = two_rooms_a
    cfg = LearnConfig(episodes=200, seed=3)
    r1 = q_learning(mdp, part["room1"], {}, cfg)
    r2 = q_learning(mdp, part["room1"], {}, cfg)
    assert r1.q == r2.q
    assert r1.policy == r2.policy


def test_q_learning_forbidden_exit_uses_fail_reward():
    mdp = tiny_mdp()
    res = q_learning(mdp, {0}, {1: FORBIDDEN}, LearnConfig(episodes=50, step_size=1.0))
    assert res.q[(0, 0)] == pytest.approx(-1.0 + FAIL_R)


def test_q_learning_room1_picks_correct_door(two_rooms_spec, two_rooms_a):
    mdp, part = two_rooms_a
    room1, room2 = part["room1"], part["room2"]
    v_star = value_iteration(mdp).values
    bnd = continuation_boundary(mdp, room1, room2, v_star)
    res = q_learning(mdp, room1, bnd, LearnConfig(episodes=20_000, seed=0))
    v_opt = value_iteration(restrict(mdp, room1, bnd).mdp).values
    good = 0
    pol_star = greedy_policy(mdp, v_star)
    doors = {s for s in room2 if any(t.next_state == s for s1 in room1
                                     for _, tr in mdp.rows[s1] for t in tr)}

    def exit_door(pol, s):
        for _ in range(200):
            if s not in room1:
                return s
            s = mdp.transitions[(s, pol[s])][0].next_state
        return None

    for s in room1:
        good += exit_door(res.policy, s) == exit_door(pol_star, s)
    assert len(doors) == 2 and v_opt is not None
    assert good / len(room1) >= 0.95
