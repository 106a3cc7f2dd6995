"""Experiment presets comparing composition pipelines on the bundled worlds.

Each preset writes a ``report.json``, a ``policies.csv`` table, and heatmaps
(plain PGM plus an ASCII grid) into its output directory. It returns the
report together with a list of failed ordering checks.
"""
from __future__ import annotations

import csv
import dataclasses
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import io
from .bt import execute, push_box_tree
from .composition import (
    SwitchingPolicy,
    compose_local,
    compose_manual_learned,
    compose_mixture,
    decoupled_solve,
    evaluate_switching_policy,
    optimal_policy,
    value_function_gap,
)
from .envs import (
    PushBoxLayout,
    build_push_box,
    build_two_rooms,
    canonical_two_rooms,
    crafted_push_box_spec,
    door_cells,
    manual_push_policy,
    push_box_predicates,
    shortest_path_oracle,
)
from .mdp import Mdp, Policy, RegionPartition, Transition
from .restriction import constant_boundary, continuation_boundary, restrict
from .solvers import SolveConfig, Sweep, policy_evaluation, value_iteration

DEFAULT_ROLLOUTS = 2000


@dataclass
class PolicyMetrics:
    """Exact and sampled statistics of one switching policy."""

    name: str
    exact_mean_value: float
    exact_success_rate: float
    mean_reward: float
    success_rate: float
    mean_success_duration: float | None
    mean_failure_duration: float | None
    rollouts: int

    def row(self) -> list[Any]:
        return [self.name, self.exact_mean_value, self.exact_success_rate, self.mean_reward,
                self.success_rate, self.mean_success_duration, self.mean_failure_duration,
                self.rollouts]


METRIC_COLUMNS = ["policy", "exact_mean_value", "exact_success_rate", "mean_reward",
                  "success_rate", "mean_success_duration", "mean_failure_duration", "rollouts"]


@dataclass
class ExperimentOutcome:
    report: dict[str, Any]
    failures: list[str]


def success_probability(mdp: Mdp, pi: Policy, success: set[int],
                        cfg: SolveConfig | None = None) -> np.ndarray:
    """Probability of being absorbed in ``success`` when following ``pi``."""
    trans = {}
    for (s, a), outs in mdp.transitions.items():
        trans[(s, a)] = tuple(
            Transition(t.next_state, t.prob,
                       1.0 if (t.next_state in success and s not in mdp.terminal) else 0.0)
            for t in outs)
    indicator = dataclasses.replace(mdp, transitions=trans, discount=1.0)
    return policy_evaluation(indicator, pi, cfg)


def _rollout_stats(run: Callable[[int, np.random.Generator], tuple[float, int, bool]],
                   starts: list[int], n: int, seed: int) -> tuple[float, float, float | None,
                                                                 float | None]:
    rng = np.random.default_rng(seed)
    rewards, ok_len, bad_len = [], [], []
    for _ in range(n):
        s0 = starts[int(rng.integers(len(starts)))]
        total, steps, success = run(s0, rng)
        rewards.append(total)
        (ok_len if success else bad_len).append(steps)
    mean = float(np.mean(rewards)) if rewards else 0.0
    rate = len(ok_len) / n if n else 0.0
    return (mean, rate, float(np.mean(ok_len)) if ok_len else None,
            float(np.mean(bad_len)) if bad_len else None)


def _write_table(path: Path, metrics: list[PolicyMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for m in metrics:
            w.writerow(["" if x is None else x for x in m.row()])


def _heatmap(out: Path, name: str, arr: np.ndarray, files: list[str]) -> None:
    io.write_pgm(out / f"{name}.pgm", arr)
    (out / f"{name}.txt").write_text(io.ascii_grid(arr))
    files += [f"{name}.pgm", f"{name}.txt"]


# --- two rooms -------------------------------------------------------------------

def _grid_array(spec, mdp: Mdp, values, region=None) -> np.ndarray:
    """Values on the map; cells outside ``region`` are left blank like walls."""
    region = None if region is None else set(region)
    arr = np.full((spec.height, spec.width), np.nan)
    cells = spec.cells
    for s in range(mdp.num_states):
        if region is None or s in region:
            x, y = cells[s]
            arr[y, x] = float(values[s])
    return arr


def two_rooms_fig1(out: Path, seed: int = 0, rollouts: int = DEFAULT_ROLLOUTS,
                   cfg: SolveConfig | None = None) -> ExperimentOutcome:
    """Door economics on the canonical two-rooms map, with value heatmaps."""
    spec = canonical_two_rooms()
    m_a, part = build_two_rooms(spec, "A")
    m_b, _ = build_two_rooms(spec, "B")
    room1, room2 = part["room1"], part["room2"]
    upper, lower = door_cells(spec)
    a_cell, b_cell = spec.target("A"), spec.target("B")

    v_a, _ = optimal_policy(m_a, cfg)
    v_b, _ = optimal_policy(m_b, cfg)
    vf_a = decoupled_solve(m_a, room1, room2, cfg)
    vf_b = decoupled_solve(m_b, room1, room2, cfg)
    loc_a = compose_local(m_a, room1, room2, cfg)
    mix = compose_mixture([(0.3, m_a), (0.7, m_b)], room1, room2, cfg)

    v_loc = evaluate_switching_policy(m_a, loc_a.composed, cfg)
    v_vf = evaluate_switching_policy(m_a, vf_a.composed, cfg)
    worst = max(room1, key=lambda s: (v_a[s] - v_loc[s], -s))

    def run_factory(mdp: Mdp, sp: SwitchingPolicy):
        flat = sp.flatten()

        def run(s0, rng):
            s, total, steps = s0, 0.0, 0
            while s not in mdp.terminal and steps < 10_000:
                t = mdp.transitions[(s, flat[s])][0]
                total += t.reward
                s = t.next_state
                steps += 1
            return total, steps, s in mdp.terminal
        return run

    starts = sorted(room1)
    metrics = []
    for name, mdp, sp, v_exact in (("LocalCompose", m_a, loc_a.composed, v_loc),
                                   ("VfCompose", m_a, vf_a.composed, v_vf)):
        mean, rate, ok, bad = _rollout_stats(run_factory(mdp, sp), starts, rollouts, seed)
        p_succ = success_probability(mdp, sp.flatten(), set(mdp.terminal), cfg)
        metrics.append(PolicyMetrics(name, float(np.mean(v_exact[starts])),
                                     float(np.mean(p_succ[starts])), mean, rate, ok, bad,
                                     rollouts))

    files: list[str] = []
    out.mkdir(parents=True, exist_ok=True)
    _heatmap(out, "v_goto_A", _grid_array(spec, m_a, v_a), files)
    _heatmap(out, "v_goto_B", _grid_array(spec, m_b, v_b), files)
    _heatmap(out, "v_room1_local", _grid_array(spec, m_a, loc_a.v_alpha, room1), files)
    _heatmap(out, "v_room1_vf_A", _grid_array(spec, m_a, vf_a.v_alpha, room1), files)
    _heatmap(out, "v_room1_vf_B", _grid_array(spec, m_b, vf_b.v_alpha, room1), files)
    _heatmap(out, "v_room1_mixture", _grid_array(spec, m_a, mix.v_alpha, room1), files)
    _write_table(out / "policies.csv", metrics)
    files.append("policies.csv")

    d_up = shortest_path_oracle(spec, upper, a_cell)
    d_low = shortest_path_oracle(spec, lower, a_cell)
    gap_vf = value_function_gap(v_vf, v_a, room1)
    gap_loc = value_function_gap(v_loc, v_a, room1)
    report = {
        "preset": "two-rooms-fig1",
        "seed": seed,
        "rollouts": rollouts,
        "doors": {"upper": list(upper), "lower": list(lower)},
        "targets": {"A": list(a_cell), "B": list(b_cell)},
        "bfs_door_to_A": {"upper": d_up, "lower": d_low},
        "policies": {m.name: dataclasses.asdict(m) for m in metrics},
        "gap_to_monolithic": {"VfCompose": gap_vf[0], "LocalCompose": gap_loc[0]},
        "worst_local_state": {"state": m_a.state_names[worst],
                              "extra_steps": float(v_a[worst] - v_loc[worst])},
        "mixture_weights": [0.3, 0.7],
        "files": files,
    }
    failures = []
    if not gap_vf[0] < gap_loc[0]:
        failures.append("VfCompose gap is not below LocalCompose gap")
    if (d_up, d_low) != (2, 11):
        failures.append(f"door distances to A are {d_up}/{d_low}, expected 2/11")
    report["failures"] = failures
    io.write_json(out / "report.json", report)
    return ExperimentOutcome(report, failures)


# --- push box ---------------------------------------------------------------------

@dataclass
class PushBoxRoster:
    mdp: Mdp
    partition: RegionPartition
    layout: PushBoxLayout
    v_star: np.ndarray
    policies: dict[str, SwitchingPolicy]
    values: dict[str, np.ndarray]


def push_box_roster(spec=None, cfg: SolveConfig | None = None) -> PushBoxRoster:
    """Solve and exactly evaluate every pipeline on a push-box instance."""
    spec = spec or crafted_push_box_spec()
    mdp, part = build_push_box(spec)
    lay = PushBoxLayout(spec)
    alpha, beta = part["move_to"], part["push"] | part["done"]
    v_star, pi_star = optimal_policy(mdp, cfg)
    manual = manual_push_policy(spec)
    results = {
        "VfCompose": decoupled_solve(mdp, alpha, beta, cfg, pi_star=pi_star),
        "LocalCompose": compose_local(mdp, alpha, beta, cfg),
        "ManualVf": compose_manual_learned(mdp, alpha, beta, manual, cfg),
        "ManualLocal": compose_local(mdp, alpha, beta, cfg, beta_policy=manual),
    }
    policies = {"Monolithic": SwitchingPolicy(
        RegionPartition.from_labels(["all"] * mdp.num_states), {"all": pi_star})}
    policies.update({k: r.composed for k, r in results.items()})
    values = {k: evaluate_switching_policy(mdp, sp, cfg) for k, sp in policies.items()}
    return PushBoxRoster(mdp, part, lay, v_star, policies, values)


def _push_box_metrics(roster: PushBoxRoster, rollouts: int, seed: int,
                      cfg: SolveConfig | None) -> list[PolicyMetrics]:
    mdp, lay = roster.mdp, roster.layout
    starts = [s for s in range(mdp.num_states) if s not in mdp.terminal]
    tree = push_box_tree(push_box_predicates(lay.spec))
    metrics = []
    for name, sp in roster.policies.items():
        flat = sp.flatten()
        p_succ = success_probability(mdp, flat, {lay.success}, cfg)
        if name == "Monolithic":
            pols = {"move_to": flat, "push": flat}
        else:
            pols = {"move_to": sp.policies["alpha"], "push": sp.policies["beta"]}

        def run(s0, rng, pols=pols):
            traj = execute(tree, pols, mdp, s0, max_steps=1000, seed=rng)
            return traj.total_reward, len(traj), traj.final_state == lay.success

        mean, rate, ok, bad = _rollout_stats(run, starts, rollouts, seed)
        metrics.append(PolicyMetrics(
            name, float(np.mean(roster.values[name][starts])), float(np.mean(p_succ[starts])),
            mean, rate, ok, bad, rollouts))
    return metrics


def _box_slice(roster: PushBoxRoster, values, box) -> np.ndarray:
    spec = roster.layout.spec
    arr = np.full((spec.height, spec.width), np.nan)
    for x in range(spec.width):
        for y in range(spec.height):
            s = roster.layout.index.get(((x, y), box))
            if s is not None:
                arr[y, x] = values[s]
    return arr


def pushbox_pi_roster(out: Path, seed: int = 0, rollouts: int = DEFAULT_ROLLOUTS,
                      cfg: SolveConfig | None = None) -> ExperimentOutcome:
    roster = push_box_roster(cfg=cfg)
    metrics = _push_box_metrics(roster, rollouts, seed, cfg)
    by_name = {m.name: m for m in metrics}
    out.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    box = (3, 3)
    for name, vals in roster.values.items():
        _heatmap(out, f"v_{name}_box3_3", _box_slice(roster, vals, box), files)
    _write_table(out / "policies.csv", metrics)
    files.append("policies.csv")
    failures = []
    if by_name["VfCompose"].exact_success_rate < by_name["LocalCompose"].exact_success_rate:
        failures.append("VfCompose success rate below LocalCompose")
    if by_name["ManualVf"].exact_success_rate < by_name["ManualLocal"].exact_success_rate:
        failures.append("ManualVf success rate below ManualLocal")
    report = {
        "preset": "pushbox-pi-roster",
        "seed": seed,
        "rollouts": rollouts,
        "instance": io.push_box_spec_to_json(roster.layout.spec),
        "num_states": roster.mdp.num_states,
        "policies": {m.name: dataclasses.asdict(m) for m in metrics},
        "heatmap_box_cell": list(box),
        "files": files,
        "failures": failures,
    }
    io.write_json(out / "report.json", report)
    return ExperimentOutcome(report, failures)


def _alpha_gap_series(mdp: Mdp, region, boundary, v_star, v_beta, beta,
                      cfg: SolveConfig) -> list[list[float]]:
    """MAE between the stitched value iterate and ``v_star`` after every sweep."""
    rm = restrict(mdp, region, boundary)
    region_idx = np.array(sorted(region))
    beta_idx = np.array(sorted(beta))
    series = []

    def record(it, v):
        stitched = np.array(v_star, dtype=float)
        stitched[beta_idx] = v_beta[beta_idx]
        stitched[region_idx] = rm.to_original(v, mdp.num_states)[region_idx]
        finite = np.isfinite(stitched)
        diff = np.abs(stitched[finite] - np.asarray(v_star)[finite])
        series.append([it, float(diff.mean())])

    value_iteration(rm.mdp, dataclasses.replace(cfg, sweep=Sweep.JACOBI),
                    init=np.zeros(rm.mdp.num_states), callback=record)
    return series


def vf_gap(out: Path, seed: int = 0, rollouts: int = DEFAULT_ROLLOUTS,
           cfg: SolveConfig | None = None) -> ExperimentOutcome:
    """Per-sweep value-function gap of each pipeline to the monolithic optimum."""
    cfg = cfg or SolveConfig()
    roster = push_box_roster(cfg=cfg)
    mdp, part = roster.mdp, roster.partition
    alpha, beta = part["move_to"], part["push"] | part["done"]
    v_star = roster.v_star
    non_terminal = [s for s in range(mdp.num_states) if s not in mdp.terminal]

    vf = decoupled_solve(mdp, alpha, beta, cfg, check=False)
    loc = compose_local(mdp, alpha, beta, cfg)
    man = compose_manual_learned(mdp, alpha, beta, manual_push_policy(roster.layout.spec),
                                 cfg, check=False)
    series = {
        "VfCompose": _alpha_gap_series(mdp, alpha, continuation_boundary(mdp, alpha, beta,
                                                                         vf.v_beta),
                                       v_star, vf.v_beta, beta, cfg),
        "LocalCompose": _alpha_gap_series(mdp, alpha, constant_boundary(mdp, alpha, beta),
                                          v_star, loc.v_beta, beta, cfg),
        "ManualVf": _alpha_gap_series(mdp, alpha, man.boundaries["alpha"], v_star,
                                      man.v_beta, beta, cfg),
    }
    # two readings of "gap": the move-to critic's own estimate, and the true
    # value of the composed controller
    critic = {k: rows[-1][1] for k, rows in series.items()}
    final = {k: value_function_gap(roster.values[k], v_star, non_terminal)
             for k in ("VfCompose", "LocalCompose", "ManualVf", "ManualLocal")}
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gap_series.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pipeline", "iteration", "mae"])
        for k, rows in series.items():
            for it, mae in rows:
                w.writerow([k, it, mae])
    failures = []
    for other in ("LocalCompose", "ManualVf"):
        if not final["VfCompose"][0] < final[other][0]:
            failures.append(f"VfCompose policy gap not below {other}")
        if not critic["VfCompose"] < critic[other]:
            failures.append(f"VfCompose critic gap not below {other}")
    report = {
        "preset": "vf-gap",
        "seed": seed,
        "instance": io.push_box_spec_to_json(roster.layout.spec),
        "critic_gap_series": series,
        "critic_final_gap": critic,
        "policy_gap": {k: {"mae": g[0], "max": g[1], "states": g[2]} for k, g in final.items()},
        "files": ["gap_series.csv"],
        "failures": failures,
    }
    io.write_json(out / "report.json", report)
    return ExperimentOutcome(report, failures)


PRESETS: dict[str, Callable[..., ExperimentOutcome]] = {
    "two-rooms-fig1": two_rooms_fig1,
    "pushbox-pi-roster": pushbox_pi_roster,
    "vf-gap": vf_gap,
}
