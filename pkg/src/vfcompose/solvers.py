"""Dynamic-programming solvers, tabular Q-learning and a brute-force oracle.

Value functions are float arrays indexed by state. ``-inf`` is the exact
"forbidden" value: it absorbs under addition and loses under ``max``, and it
is only ever produced by forbidden transitions or by successors that already
hold it. ``nan`` marks an undefined entry.
"""
from __future__ import annotations

import enum
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import numpy as np

from .mdp import NEG_INF, Mdp, Policy, check_valid

log = logging.getLogger(__name__)

#: Terminal reward used by the sampling learner in place of a forbidden exit.
FAIL_R = -1.0


class DivergenceError(RuntimeError):
    """Raised when an iterative solver cannot reach its tolerance."""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("inf")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class Sweep(enum.Enum):
    JACOBI = "jacobi"
    GAUSS_SEIDEL = "gauss-seidel"


@dataclass(frozen=True)
class SolveConfig:
    tolerance: float = 1e-9
    max_iterations: int = 100_000
    sweep: Sweep = Sweep.GAUSS_SEIDEL

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class LearnConfig:
    episodes: int = 10_000
    step_size: float = 0.1
    exploration: float = 0.2
    max_episode_steps: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 1 or self.max_episode_steps < 1:
            raise ValueError("episodes and max_episode_steps must be positive")
        if not 0 < self.step_size <= 1:
            raise ValueError("step_size must lie in (0, 1]")
        if not 0 <= self.exploration <= 1:
            raise ValueError("exploration must lie in [0, 1]")


@dataclass(frozen=True)
class SolveResult:
    values: np.ndarray
    iterations: int
    residual: float

    def __iter__(self):
        return iter((self.values, self.iterations, self.residual))


def _action_value(mdp: Mdp, trans, v) -> float:
    gamma = mdp.discount
    total = 0.0
    for t in trans:
        if t.forbidden:
            return NEG_INF
        nv = v[t.next_state]
        if nv == NEG_INF:
            return NEG_INF
        total += t.prob * (t.reward + gamma * nv)
    return total


def bellman_backup(mdp: Mdp, v, s: int) -> float:
    """``max_a sum_s' p(s'|s,a) [r(s,s',a) + gamma v(s')]`` at one state."""
    best = NEG_INF
    for _, trans in mdp.rows[s]:
        q = _action_value(mdp, trans, v)
        if q > best:
            best = q
    return best


def q_values(mdp: Mdp, v, s: int) -> list[tuple[int, float]]:
    return [(a, _action_value(mdp, trans, v)) for a, trans in mdp.rows[s]]


def _change(new: float, old: float) -> float:
    if new == old:
        return 0.0
    return abs(new - old)


def _safe_and_proper(mdp: Mdp) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Graph analysis run before iterating.

    Returns boolean masks ``(safe, proper, reach)``:

    * ``safe``: some policy avoids forbidden transitions forever;
    * ``proper``: some policy reaches a terminal with probability one while
      avoiding forbidden transitions;
    * ``reach``: a terminal is reachable at all, forbidden edges included.
    """
    n = mdp.num_states
    rows = mdp.rows
    terminal = np.zeros(n, dtype=bool)
    terminal[list(mdp.terminal)] = True

    def clean_actions(allowed: np.ndarray):
        return [
            [a for a, trans in rows[s]
             if not any(t.forbidden for t in trans)
             and all(allowed[t.next_state] for t in trans)]
            for s in range(n)
        ]

    safe = np.ones(n, dtype=bool)
    while True:
        acts = clean_actions(safe)
        nxt = np.array([bool(acts[s]) for s in range(n)])
        if np.array_equal(nxt, safe):
            break
        safe = nxt

    # almost-sure reachability: shrink candidate set until it stabilises
    cand = safe.copy()
    while True:
        acts = clean_actions(cand)
        preds: list[list[int]] = [[] for _ in range(n)]
        for s in range(n):
            if not cand[s]:
                continue
            for a in acts[s]:
                for t in mdp.transitions[(s, a)]:
                    preds[t.next_state].append(s)
        good = terminal & cand
        stack = list(np.flatnonzero(good))
        while stack:
            u = stack.pop()
            for p in preds[u]:
                if not good[p]:
                    good[p] = True
                    stack.append(p)
        if np.array_equal(good, cand):
            break
        cand = good
    proper = cand

    preds_all: list[list[int]] = [[] for _ in range(n)]
    for s, _, s2 in mdp.edges():
        preds_all[s2].append(s)
    reach = terminal.copy()
    stack = list(np.flatnonzero(reach))
    while stack:
        u = stack.pop()
        for p in preds_all[u]:
            if not reach[p]:
                reach[p] = True
                stack.append(p)
    return safe, proper, reach


def _initial_values(mdp: Mdp, init) -> tuple[np.ndarray, np.ndarray]:
    """Pin forced ``-inf`` states and return ``(v, active_mask)``."""
    n = mdp.num_states
    safe, proper, reach = _safe_and_proper(mdp)
    if mdp.discount >= 1.0:
        stuck = ~reach
        if stuck.any():
            bad = np.flatnonzero(stuck)[:5].tolist()
            raise DivergenceError(
                f"gamma=1 and no terminal state is reachable from states {bad}")
        finite = proper
    else:
        finite = safe
    v = np.zeros(n) if init is None else np.array(init, dtype=float)
    if v.shape != (n,):
        raise ValueError("init has the wrong shape")
    v = np.where(np.isnan(v), 0.0, v)
    v[~finite] = NEG_INF
    term = list(mdp.terminal)
    v[term] = 0.0
    active = finite.copy()
    active[term] = False
    # a user-supplied -inf on a finite state would poison the iteration
    v[active & ~np.isfinite(v)] = 0.0
    return v, active


class _Flat:
    """CSR-style arrays for vectorised Jacobi sweeps over a set of rows."""

    def __init__(self, mdp: Mdp, policy: np.ndarray | None = None):
        row_state, row_action, succ, prob, rew, forb, starts = [], [], [], [], [], [], []
        for s, row in enumerate(mdp.rows):
            for a, trans in row:
                if policy is not None and policy[s] != a:
                    continue
                row_state.append(s)
                row_action.append(a)
                starts.append(len(succ))
                for t in trans:
                    succ.append(t.next_state)
                    prob.append(t.prob)
                    rew.append(t.reward)
                    forb.append(t.forbidden)
        self.row_state = np.array(row_state, dtype=np.int64)
        self.row_action = np.array(row_action, dtype=np.int64)
        self.starts = np.array(starts, dtype=np.int64)
        self.succ = np.array(succ, dtype=np.int64)
        self.prob = np.array(prob)
        self.rew = np.array(rew)
        self.forb = np.array(forb, dtype=bool)
        self.gamma = mdp.discount
        self.n = mdp.num_states
        self.state_starts = np.searchsorted(self.row_state, np.arange(self.n))

    def q(self, v: np.ndarray) -> np.ndarray:
        nv = v[self.succ]
        dead = self.forb | (nv == NEG_INF)
        with np.errstate(invalid="ignore"):
            terms = self.prob * (self.rew + self.gamma * np.where(dead, 0.0, nv))
        q = np.add.reduceat(terms, self.starts) if len(terms) else np.zeros(0)
        bad = np.add.reduceat(dead.astype(np.int64), self.starts) > 0 if len(terms) else q > 0
        q[bad] = NEG_INF
        return q

    def backup(self, v: np.ndarray) -> np.ndarray:
        q = self.q(v)
        return np.maximum.reduceat(q, self.state_starts)


def _residual(flat: _Flat, v: np.ndarray, active: np.ndarray) -> float:
    new = flat.backup(v)
    if not active.any():
        return 0.0
    a, b = new[active], v[active]
    same = a == b
    with np.errstate(invalid="ignore"):
        diff = np.where(same, 0.0, np.abs(a - b))
    diff = np.where(np.isnan(diff), np.inf, diff)
    return float(diff.max())


def value_iteration(mdp: Mdp, cfg: SolveConfig | None = None, init=None,
                    callback=None) -> SolveResult:
    """Successive approximation of the Bellman optimality equation.

    States that cannot avoid a forbidden transition get ``-inf`` up front, as
    do (for ``gamma == 1``) states that cannot reach a terminal without one.
    ``callback(iteration, v)`` is called after every sweep if given.

    Raises:
        InvalidMdpError: the model fails :func:`validate`.
        DivergenceError: ``max_iterations`` sweeps without meeting the tolerance,
            or ``gamma == 1`` with a state that can never terminate.
    """
    cfg = cfg or SolveConfig()
    check_valid(mdp)
    v, active = _initial_values(mdp, init)
    flat = _Flat(mdp)
    idx = np.flatnonzero(active).tolist()
    rows = mdp.rows
    for it in range(1, cfg.max_iterations + 1):
        if cfg.sweep is Sweep.JACOBI:
            new = flat.backup(v)
            new[~active] = v[~active]
            with np.errstate(invalid="ignore"):
                d = np.where(new == v, 0.0, np.abs(new - v))
            delta = float(np.nan_to_num(d, nan=np.inf).max()) if len(d) else 0.0
            v = new
        else:
            delta = 0.0
            vl = v.tolist()
            for s in idx:
                best = NEG_INF
                for _, trans in rows[s]:
                    q = _action_value(mdp, trans, vl)
                    if q > best:
                        best = q
                dd = _change(best, vl[s])
                if dd > delta:
                    delta = dd
                vl[s] = best
            v = np.array(vl)
        if callback is not None:
            callback(it, v)
        if delta <= cfg.tolerance:
            res = _residual(flat, v, active)
            if res <= cfg.tolerance:
                log.debug("value iteration converged in %d sweeps (residual %.3g)", it, res)
                return SolveResult(v, it, res)
    res = _residual(flat, v, active)
    raise DivergenceError(
        f"value iteration did not converge in {cfg.max_iterations} sweeps "
        f"(residual {res:.3g})", cfg.max_iterations, res)


def greedy_policy(mdp: Mdp, v) -> Policy:
    """Argmax extraction with ties broken towards the lowest action id.

    Raises ValueError when every action at a non-terminal state is ``-inf``.
    """
    v = np.asarray(v, dtype=float)
    acts = np.full(mdp.num_states, -1, dtype=np.int64)
    vl = v.tolist()
    for s in range(mdp.num_states):
        if s in mdp.terminal:
            acts[s] = mdp.available[s][0]
            continue
        best_a, best_q = -1, NEG_INF
        for a, q in sorted(q_values(mdp, vl, s)):
            if q > best_q:
                best_a, best_q = a, q
        if best_a < 0:
            raise ValueError(f"every action at state {s} ({mdp.state_names[s]}) is -inf")
        acts[s] = best_a
    return Policy(acts)


def induced_mdp(mdp: Mdp, pi: Policy) -> Mdp:
    """The single-action MDP obtained by fixing ``pi`` wherever it is defined."""
    available = tuple(
        (pi[s],) if s in pi and s not in mdp.terminal else mdp.available[s]
        for s in range(mdp.num_states)
    )
    for s in range(mdp.num_states):
        if s in pi and s not in mdp.terminal and pi[s] not in mdp.available[s]:
            raise ValueError(f"policy action {pi[s]} not available at state {s}")
    trans = {(s, a): mdp.transitions[(s, a)] for s in range(mdp.num_states)
             for a in available[s]}
    return Mdp(mdp.state_names, mdp.action_names, available, trans,
               mdp.discount, mdp.terminal)


def policy_evaluation(mdp: Mdp, pi: Policy, cfg: SolveConfig | None = None) -> np.ndarray:
    """Solve the policy Bellman equation of ``pi`` iteratively.

    ``pi`` must be defined on every non-terminal state.
    """
    cfg = cfg or SolveConfig()
    missing = [s for s in range(mdp.num_states)
               if s not in mdp.terminal and s not in pi]
    if missing:
        raise ValueError(f"policy undefined at non-terminal states {missing[:5]}")
    fixed = induced_mdp(mdp, pi)
    if mdp.discount >= 1.0:
        _, _, reach = _safe_and_proper(fixed)
        if not reach.all():
            bad = np.flatnonzero(~reach)[:5].tolist()
            raise DivergenceError(f"policy never terminates from states {bad} with gamma=1")
    return value_iteration(fixed, cfg).values


def brute_force_optimal(mdp: Mdp, horizon: int, budget: int = 50_000_000) -> np.ndarray:
    """Finite-horizon backward induction from a zero terminal value.

    Deliberately naive dict-and-loop code, kept apart from
    :func:`value_iteration` so the two can check each other.
    """
    work = mdp.num_states * max(mdp.num_actions, 1) * horizon
    if work > budget:
        raise ValueError(f"brute force work {work} exceeds budget {budget}")
    gamma = mdp.discount
    v = {s: 0.0 for s in range(mdp.num_states)}
    for _ in range(horizon):
        nxt = {}
        for s in range(mdp.num_states):
            if s in mdp.terminal:
                nxt[s] = 0.0
                continue
            best = NEG_INF
            for a in mdp.available[s]:
                q = 0.0
                for t in mdp.transitions[(s, a)]:
                    if t.forbidden or v[t.next_state] == NEG_INF:
                        q = NEG_INF
                        break
                    q += t.prob * (t.reward + gamma * v[t.next_state])
                best = max(best, q)
            nxt[s] = best
        v = nxt
    return np.array([v[s] for s in range(mdp.num_states)])


@dataclass
class QResult:
    q: dict[tuple[int, int], float]
    values: np.ndarray
    policy: Policy

    def __iter__(self):
        return iter((self.q, self.values, self.policy))


def q_learning(mdp: Mdp, region: Iterable[int],
               boundary: Mapping[int, object] | None, lcfg: LearnConfig) -> QResult:
    """Seeded epsilon-greedy tabular Q-learning confined to ``region``.

    Episodes start at a uniformly drawn region state. A transition that leaves
    the region ends the episode with target ``r + boundary[s']``; a forbidden
    boundary entry is replaced by :data:`FAIL_R`. Returned values and policy
    are defined on the region only (``nan`` / ``-1`` elsewhere).
    """
    from .restriction import FORBIDDEN  # local import avoids a cycle

    region_list = sorted(set(int(s) for s in region))
    inside = np.zeros(mdp.num_states, dtype=bool)
    inside[region_list] = True
    boundary = boundary or {}
    rng = np.random.default_rng(lcfg.seed)
    gamma, alpha, eps = mdp.discount, lcfg.step_size, lcfg.exploration

    q = {(s, a): 0.0 for s in region_list for a in mdp.available[s]}
    # sampling tables per (s, a)
    succ_tab = {}
    for s in region_list:
        for a in mdp.available[s]:
            trans = mdp.transitions[(s, a)]
            succ_tab[(s, a)] = (
                [t.next_state for t in trans],
                np.cumsum([t.prob for t in trans]),
                [t.reward for t in trans],
            )

    def exit_value(s2: int) -> float:
        b = boundary.get(s2, FORBIDDEN)
        return FAIL_R if b is FORBIDDEN else float(b)

    def greedy(s: int) -> int:
        acts = mdp.available[s]
        best, best_q = acts[0], q[(s, acts[0])]
        for a in acts[1:]:
            if q[(s, a)] > best_q:
                best, best_q = a, q[(s, a)]
        return best

    for _ in range(lcfg.episodes):
        s = region_list[int(rng.integers(len(region_list)))]
        for _ in range(lcfg.max_episode_steps):
            if s in mdp.terminal:
                break
            acts = mdp.available[s]
            if rng.random() < eps:
                a = acts[int(rng.integers(len(acts)))]
            else:
                a = greedy(s)
            nxt, cum, rews = succ_tab[(s, a)]
            k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            k = min(k, len(nxt) - 1)
            s2, r = nxt[k], rews[k]
            if not inside[s2]:
                target = r + exit_value(s2)
                done = True
            elif s2 in mdp.terminal:
                target, done = r, True
            else:
                target = r + gamma * max(q[(s2, b)] for b in mdp.available[s2])
                done = False
            q[(s, a)] += alpha * (target - q[(s, a)])
            if done:
                break
            s = s2

    values = np.full(mdp.num_states, np.nan)
    acts = np.full(mdp.num_states, -1, dtype=np.int64)
    for s in region_list:
        acts[s] = greedy(s)
        values[s] = max(q[(s, a)] for a in mdp.available[s])
    return QResult(q, values, Policy(acts))
