"""Composing region-local solutions into one switching controller.

The central construction solves the later region first with every exit
forbidden, then solves the earlier region with the later region's discounted
value as the reward for crossing the boundary. Under the checks in
:func:`check_assumption` the stitched value function equals the optimum of
the undivided problem.
"""
from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .mdp import Mdp, Policy, RegionPartition, mdp_neighbors
from .restriction import (
    BoundaryValue,
    constant_boundary,
    continuation_boundary,
    forbidden_boundary,
    mixture_boundary,
    restrict,
)
from .solvers import (
    SolveConfig,
    greedy_policy,
    induced_mdp,
    policy_evaluation,
    value_iteration,
)

log = logging.getLogger(__name__)


class Witness(NamedTuple):
    rule: str
    state: int | None
    action: int | None
    successor: int | None


@dataclass
class AssumptionReport:
    neighbors_ok: bool
    finite_reward_ok: bool
    no_return_ok: bool
    direct_transition_ok: bool
    witnesses: list[Witness] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (self.neighbors_ok and self.finite_reward_ok
                and self.no_return_ok and self.direct_transition_ok)

    def describe(self, mdp: Mdp | None = None, limit: int = 10) -> str:
        def name(s):
            if s is None:
                return "-"
            return mdp.state_names[s] if mdp is not None else str(s)

        lines = [
            f"neighbors={self.neighbors_ok} finite_reward={self.finite_reward_ok} "
            f"no_return={self.no_return_ok} direct_transition={self.direct_transition_ok}"
        ]
        for w in self.witnesses[:limit]:
            act = "-" if w.action is None else (
                mdp.action_names[w.action] if mdp is not None else str(w.action))
            lines.append(f"  {w.rule}: {name(w.state)} --{act}--> {name(w.successor)}")
        if len(self.witnesses) > limit:
            lines.append(f"  ... {len(self.witnesses) - limit} more")
        return "\n".join(lines)


class AssumptionError(RuntimeError):
    def __init__(self, report: AssumptionReport, mdp: Mdp | None = None,
                 where: str = ""):
        self.report = report
        prefix = f"{where}: " if where else ""
        super().__init__(f"{prefix}composition assumption violated\n{report.describe(mdp)}")


@dataclass(frozen=True)
class SwitchingPolicy:
    """One sub-policy per region of a partition."""

    partition: RegionPartition
    policies: Mapping[str, Policy]

    def flatten(self) -> Policy:
        n = len(self.partition.labels)
        acts = np.full(n, -1, dtype=np.int64)
        for lab, states in self.partition.regions.items():
            pol = self.policies.get(lab)
            if pol is None:
                continue
            for s in states:
                if s in pol:
                    acts[s] = pol[s]
        return Policy(acts)

    def covers(self, mdp: Mdp) -> bool:
        flat = self.flatten()
        return all(s in flat or s in mdp.terminal for s in range(mdp.num_states))


@dataclass
class CompositionResult:
    v_alpha: np.ndarray
    v_beta: np.ndarray
    composed: SwitchingPolicy
    v_composed: np.ndarray
    assumption: AssumptionReport | None = None
    region_values: dict[str, np.ndarray] = field(default_factory=dict)
    boundaries: dict[str, BoundaryValue] = field(default_factory=dict)


def _sets(mdp: Mdp, *groups: Iterable[int]) -> list[frozenset[int]]:
    out = [frozenset(int(s) for s in g) for g in groups]
    for i in range(len(out)):
        for j in range(i + 1, len(out)):
            if out[i] & out[j]:
                raise ValueError("region sets overlap")
    for g in out:
        if any(not 0 <= s < mdp.num_states for s in g):
            raise ValueError("region contains out-of-range states")
    return out


def _chain_reaches(mdp: Mdp, pi: Policy, starts: Iterable[int], targets) -> set[int]:
    """States reachable from ``starts`` under ``pi`` that cannot reach ``targets``."""
    seen: set[int] = set()
    stack = list(starts)
    succ: dict[int, list[int]] = {}
    while stack:
        s = stack.pop()
        if s in seen:
            continue
        seen.add(s)
        if s in mdp.terminal or s not in pi:
            succ[s] = []
            continue
        nxt = [t.next_state for t in mdp.transitions[(s, pi[s])] if t.prob > 0]
        succ[s] = nxt
        stack.extend(nxt)
    preds: dict[int, list[int]] = {s: [] for s in seen}
    for s, nxt in succ.items():
        for s2 in nxt:
            preds[s2].append(s)
    good = {s for s in seen if targets(s)}
    stack = list(good)
    while stack:
        u = stack.pop()
        for p in preds[u]:
            if p not in good:
                good.add(p)
                stack.append(p)
    return seen - good


def check_assumption(mdp: Mdp, omega_a: Iterable[int], omega_b: Iterable[int],
                     pi_star: Policy) -> AssumptionReport:
    """Scan the support graph of the chain induced by ``pi_star``.

    Only the supplied optimal policy is inspected; a different optimal policy
    could behave differently, so callers should still compare the composed
    value against a monolithic solve where it matters.
    """
    a_set, b_set = _sets(mdp, omega_a, omega_b)
    union = a_set | b_set
    witnesses: list[Witness] = []

    neighbors_ok = bool(a_set) and mdp_neighbors(mdp, a_set, b_set)
    if not neighbors_ok:
        witnesses.append(Witness("neighbors", None, None, None))

    no_return_ok = True
    direct_ok = True
    finite_ok = True
    for s in sorted(union):
        if s in mdp.terminal:
            continue
        if s not in pi_star:
            finite_ok = False
            witnesses.append(Witness("policy-undefined", s, None, None))
            continue
        a = pi_star[s]
        for t in mdp.transitions[(s, a)]:
            if t.prob <= 0:
                continue
            if t.forbidden:
                finite_ok = False
                witnesses.append(Witness("forbidden-edge", s, a, t.next_state))
            if s in b_set and t.next_state not in b_set:
                no_return_ok = False
                witnesses.append(Witness("leaves-beta", s, a, t.next_state))
            elif s in a_set and t.next_state not in union:
                direct_ok = False
                witnesses.append(Witness("alpha-exits-elsewhere", s, a, t.next_state))

    # from alpha the chain must be able to get into beta from everywhere it goes
    stuck = _chain_reaches(mdp, pi_star, a_set, lambda s: s in b_set)
    for s in sorted(stuck & a_set):
        finite_ok = False
        witnesses.append(Witness("alpha-never-reaches-beta", s,
                                 pi_star[s] if s in pi_star else None, None))
    if mdp.discount >= 1.0:
        stuck_b = _chain_reaches(mdp, pi_star, b_set, lambda s: s in mdp.terminal)
        for s in sorted(stuck_b & b_set):
            finite_ok = False
            witnesses.append(Witness("beta-never-terminates", s,
                                     pi_star[s] if s in pi_star else None, None))
    return AssumptionReport(neighbors_ok, finite_ok, no_return_ok, direct_ok, witnesses)


def optimal_policy(mdp: Mdp, cfg: SolveConfig | None = None) -> tuple[np.ndarray, Policy]:
    v = value_iteration(mdp, cfg).values
    return v, greedy_policy(mdp, v)


def solve_region(mdp: Mdp, region: Iterable[int], boundary, cfg: SolveConfig | None = None,
                 policy: Policy | None = None) -> tuple[np.ndarray, Policy]:
    """Solve the restriction of ``mdp`` to ``region``.

    With ``policy`` given the region is evaluated under that policy instead of
    optimised. Returns values and policy in original coordinates, defined on
    the region only.
    """
    region = frozenset(region)
    rm = restrict(mdp, region, boundary)
    if policy is None:
        v_r = value_iteration(rm.mdp, cfg).values
        pi_r = greedy_policy(rm.mdp, v_r)
    else:
        fwd = rm.forward()
        acts = np.full(rm.mdp.num_states, -1, dtype=np.int64)
        for s in region:
            if s not in mdp.terminal:
                acts[fwd[s]] = policy[s]
        pi_r = Policy(acts)
        v_r = policy_evaluation(rm.mdp, pi_r, cfg)
    v = rm.to_original(v_r, mdp.num_states)
    acts = np.full(mdp.num_states, -1, dtype=np.int64)
    for i in rm.core:
        acts[rm.back_map[i]] = pi_r.actions[i] if pi_r.actions[i] >= 0 else (
            rm.mdp.available[i][0])
    return v, Policy(acts)


def _two_region_partition(mdp: Mdp, a_set, b_set) -> RegionPartition:
    labels = ["alpha" if s in a_set else "beta" if s in b_set else "outside"
              for s in range(mdp.num_states)]
    order = ["alpha", "beta"] + (["outside"] if "outside" in labels else [])
    return RegionPartition.from_labels(labels, order)


def _stitch(n: int, parts: Iterable[tuple[Iterable[int], np.ndarray]]) -> np.ndarray:
    out = np.full(n, np.nan)
    for states, vals in parts:
        idx = np.fromiter(states, dtype=np.int64)
        out[idx] = vals[idx]
    return out


def decoupled_solve(mdp: Mdp, omega_a: Iterable[int], omega_b: Iterable[int],
                    cfg: SolveConfig | None = None, *, check: bool = True,
                    pi_star: Policy | None = None) -> CompositionResult:
    """Solve ``omega_b`` with forbidden exits, then ``omega_a`` with continuation.

    When ``check`` is set the assumption is verified first against ``pi_star``
    (computed by a monolithic solve when not supplied).

    Raises:
        AssumptionError: the check fails; the report lists violating edges.
    """
    a_set, b_set = _sets(mdp, omega_a, omega_b)
    if not b_set:
        raise ValueError("omega_b must be non-empty")
    report = None
    if check and a_set:
        if pi_star is None:
            _, pi_star = optimal_policy(mdp, cfg)
        report = check_assumption(mdp, a_set, b_set, pi_star)
        if not report.ok:
            raise AssumptionError(report, mdp)

    v_beta, pi_beta = solve_region(mdp, b_set, forbidden_boundary(mdp, b_set), cfg)
    boundaries = {}
    if a_set:
        bnd = continuation_boundary(mdp, a_set, b_set, v_beta)
        boundaries["alpha"] = bnd
        v_alpha, pi_alpha = solve_region(mdp, a_set, bnd, cfg)
    else:
        v_alpha, pi_alpha = np.full(mdp.num_states, np.nan), Policy(
            np.full(mdp.num_states, -1))
    part = _two_region_partition(mdp, a_set, b_set)
    composed = SwitchingPolicy(part, {"alpha": pi_alpha, "beta": pi_beta})
    v_comp = _stitch(mdp.num_states, [(a_set, v_alpha), (b_set, v_beta)])
    return CompositionResult(v_alpha, v_beta, composed, v_comp, report,
                             {"alpha": v_alpha, "beta": v_beta}, boundaries)


def constrain(mdp: Mdp, omega_g: Iterable[int], pi_g: Policy) -> Mdp:
    """Shrink ``available(s)`` to ``{pi_g(s)}`` on ``omega_g``."""
    g = frozenset(int(s) for s in omega_g)
    if not g:
        return mdp
    fixed = np.full(mdp.num_states, -1, dtype=np.int64)
    for s in g:
        if s in mdp.terminal:
            continue
        if s not in pi_g:
            raise ValueError(f"pi_g undefined at state {s}")
        a = pi_g[s]
        if a not in mdp.available[s]:
            raise ValueError(f"illegal action {a} for state {mdp.state_names[s]}")
        fixed[s] = a
    return induced_mdp(mdp, Policy(fixed))


def compose_local(mdp: Mdp, omega_a: Iterable[int], omega_b: Iterable[int],
                  cfg: SolveConfig | None = None, *, beta_policy: Policy | None = None,
                  completion: float = 0.0) -> CompositionResult:
    """Locally optimal composition: the first region only aims to reach the second.

    The second region is solved with forbidden exits (or evaluated under
    ``beta_policy``); the first region gets the same ``completion`` reward at
    every entry point, ignoring what the next controller prefers.
    """
    a_set, b_set = _sets(mdp, omega_a, omega_b)
    v_beta, pi_beta = solve_region(mdp, b_set, forbidden_boundary(mdp, b_set), cfg,
                                   policy=beta_policy)
    bnd = constant_boundary(mdp, a_set, b_set, completion)
    v_alpha, pi_alpha = solve_region(mdp, a_set, bnd, cfg)
    part = _two_region_partition(mdp, a_set, b_set)
    composed = SwitchingPolicy(part, {"alpha": pi_alpha, "beta": pi_beta})
    v_comp = _stitch(mdp.num_states, [(a_set, v_alpha), (b_set, v_beta)])
    return CompositionResult(v_alpha, v_beta, composed, v_comp, None,
                             {"alpha": v_alpha, "beta": v_beta}, {"alpha": bnd})


def compose_manual_learned(mdp: Mdp, omega_a: Iterable[int], omega_g: Iterable[int],
                           pi_g: Policy, cfg: SolveConfig | None = None, *,
                           check: bool = True) -> CompositionResult:
    """Optimise ``omega_a`` around a fixed controller ``pi_g`` on ``omega_g``.

    The value of ``pi_g`` is obtained by policy evaluation on the restriction
    of the constrained model; the assumption is re-checked on that model.
    """
    a_set, g_set = _sets(mdp, omega_a, omega_g)
    constrained = constrain(mdp, g_set, pi_g)
    report = None
    if check and a_set:
        _, pi_star = optimal_policy(constrained, cfg)
        report = check_assumption(constrained, a_set, g_set, pi_star)
        if not report.ok:
            raise AssumptionError(report, mdp, "constrained model")
    v_g, pi_fixed = solve_region(constrained, g_set, forbidden_boundary(constrained, g_set),
                                 cfg, policy=pi_g)
    bnd = continuation_boundary(constrained, a_set, g_set, v_g)
    v_alpha, pi_alpha = solve_region(constrained, a_set, bnd, cfg)
    part = _two_region_partition(mdp, a_set, g_set)
    composed = SwitchingPolicy(part, {"alpha": pi_alpha, "beta": pi_fixed})
    v_comp = _stitch(mdp.num_states, [(a_set, v_alpha), (g_set, v_g)])
    return CompositionResult(v_alpha, v_g, composed, v_comp, report,
                             {"alpha": v_alpha, "beta": v_g}, {"alpha": bnd})


def compose_mixture(components: Sequence[tuple[float, Mdp]], omega_a: Iterable[int],
                    omega_b: Iterable[int], cfg: SolveConfig | None = None) -> CompositionResult:
    """First-region controller for a task drawn at random once ``omega_b`` is reached.

    ``components`` pairs a probability with the model of each possible task;
    the models must share states and agree on ``omega_a``. Each task is solved
    on ``omega_b`` separately and the first region sees the weighted mix of
    their values. ``v_beta`` is that mix; the per-task values and policies
    are kept under ``beta:<k>``.
    """
    if not components:
        raise ValueError("mixture needs at least one component")
    base = components[0][1]
    a_set, b_set = _sets(base, omega_a, omega_b)
    for _, m in components[1:]:
        if m.num_states != base.num_states or m.discount != base.discount:
            raise ValueError("mixture components must share states and discount")
        for s in a_set:
            if m.available[s] != base.available[s] or any(
                    m.transitions[(s, a)] != base.transitions[(s, a)] for a in m.available[s]):
                raise ValueError(f"components differ on the first region at state {s}")
    values, policies = {}, {}
    for k, (_, m) in enumerate(components):
        values[f"beta:{k}"], policies[f"beta:{k}"] = solve_region(
            m, b_set, forbidden_boundary(m, b_set), cfg)
    weighted = [(w, values[f"beta:{k}"]) for k, (w, _) in enumerate(components)]
    bnd = mixture_boundary(weighted, base, a_set, b_set)
    v_alpha, pi_alpha = solve_region(base, a_set, bnd, cfg)
    v_beta = sum(w * v for w, v in weighted)
    heaviest = max(range(len(components)), key=lambda k: components[k][0])
    part = _two_region_partition(base, a_set, b_set)
    composed = SwitchingPolicy(part, {"alpha": pi_alpha, "beta": policies[f"beta:{heaviest}"],
                                      **policies})
    v_comp = _stitch(base.num_states, [(a_set, v_alpha), (b_set, v_beta)])
    return CompositionResult(v_alpha, v_beta, composed, v_comp, None,
                             {"alpha": v_alpha, "beta": v_beta, **values}, {"alpha": bnd})


def recursive_compose(mdp: Mdp, partition: RegionPartition,
                      fixed: Mapping[str, Policy] | None = None,
                      cfg: SolveConfig | None = None, *, check: bool = True) -> CompositionResult:
    """Compose many regions by sweeping backwards through ``partition.order``.

    Fixed controllers are imposed first by constraining the model. The last
    region is solved with forbidden exits; each earlier region ``i`` is then
    solved against the already stitched values of all later regions.

    Raises:
        AssumptionError: a split ``(region i, regions after i)`` fails the check.
    """
    if partition.order is None:
        raise ValueError("recursive composition needs an ordered partition")
    fixed = dict(fixed or {})
    order = [lab for lab in partition.order if partition[lab]]
    model = mdp
    for lab, pol in fixed.items():
        model = constrain(model, partition[lab], pol)

    pi_star = None
    if check:
        _, pi_star = optimal_policy(model, cfg)

    n = mdp.num_states
    last = order[-1]
    later = set(partition[last])
    v_last, p_last = solve_region(model, later, forbidden_boundary(model, later), cfg,
                                  policy=fixed.get(last))
    v_stitched = _stitch(n, [(later, v_last)])
    region_values = {last: v_last}
    policies = {last: p_last}
    boundaries: dict[str, BoundaryValue] = {}
    reports = []
    v_first = v_last
    for lab in reversed(order[:-1]):
        region = partition[lab]
        if check:
            rep = check_assumption(model, region, later, pi_star)
            reports.append(rep)
            if not rep.ok:
                raise AssumptionError(rep, mdp, f"split at region {lab!r}")
        bnd = continuation_boundary(model, region, later, v_stitched)
        v_r, p_r = solve_region(model, region, bnd, cfg)
        region_values[lab] = v_r
        policies[lab] = p_r
        boundaries[lab] = bnd
        v_stitched = _stitch(n, [(later, v_stitched), (region, v_r)])
        later |= region
        v_first = v_r
    first = order[0]
    v_beta = _stitch(n, [(set(later) - set(partition[first]), v_stitched)])
    composed = SwitchingPolicy(partition, policies)
    report = reports[-1] if reports else None
    return CompositionResult(v_first, v_beta, composed, v_stitched, report,
                             region_values, boundaries)


def evaluate_switching_policy(mdp: Mdp, sp: SwitchingPolicy,
                              cfg: SolveConfig | None = None) -> np.ndarray:
    """Exact value of the flattened switching policy on the full model."""
    flat = sp.flatten()
    if not sp.covers(mdp):
        missing = [s for s in range(mdp.num_states)
                   if s not in flat and s not in mdp.terminal]
        raise ValueError(f"switching policy does not cover states {missing[:5]}")
    return policy_evaluation(mdp, flat, cfg)


def value_function_gap(v1, v2, region: Iterable[int]) -> tuple[float, float, int]:
    """Mean and max absolute difference of two value functions on ``region``."""
    idx = np.fromiter(sorted(set(region)), dtype=np.int64)
    a = np.asarray(v1, dtype=float)[idx]
    b = np.asarray(v2, dtype=float)[idx]
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("value functions must be finite on the region")
    if len(idx) == 0:
        return 0.0, 0.0, 0
    d = np.abs(a - b)
    return float(d.mean()), float(d.max()), int(len(idx))
