"""Finite MDPs with sparse transitions, region partitions and policies.

States and actions are dense integer ids. Each ``(state, action)`` pair maps
to a tuple of :class:`Transition` entries carrying the successor, its
probability, the transition reward ``r(s, s', a)`` and a ``forbidden`` flag.
The flag is only set by the restriction operator and makes a transition worth
negative infinity to the solvers.

Episode termination is encoded with absorbing states: a terminal state has a
single available action whose only successor is itself, with reward 0.
"""
from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

NEG_INF = float("-inf")
PROB_TOL = 1e-12


class Transition(NamedTuple):
    next_state: int
    prob: float
    reward: float
    forbidden: bool = False


class Violation(NamedTuple):
    rule: str
    state: int | None
    action: int | None
    detail: str

    def __str__(self) -> str:
        where = []
        if self.state is not None:
            where.append(f"s={self.state}")
        if self.action is not None:
            where.append(f"a={self.action}")
        loc = f" ({', '.join(where)})" if where else ""
        return f"{self.rule}{loc}: {self.detail}"


class InvalidMdpError(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        lines = "\n".join(f"  {v}" for v in violations[:20])
        more = f"\n  ... {len(violations) - 20} more" if len(violations) > 20 else ""
        super().__init__(f"MDP failed validation:\n{lines}{more}")


@dataclass(frozen=True, eq=True)
class Mdp:
    """A finite MDP ``(S, A, p, r)`` plus discount and terminal set.

    ``transitions`` must hold an entry for every ``(s, a)`` with
    ``a in available[s]``. Treat instances as immutable; builders assemble the
    dictionaries before construction.
    """

    state_names: tuple[str, ...]
    action_names: tuple[str, ...]
    available: tuple[tuple[int, ...], ...]
    transitions: Mapping[tuple[int, int], tuple[Transition, ...]]
    discount: float = 1.0
    terminal: frozenset[int] = field(default_factory=frozenset)

    @property
    def num_states(self) -> int:
        return len(self.state_names)

    @property
    def num_actions(self) -> int:
        return len(self.action_names)

    def successors(self, s: int, a: int) -> tuple[Transition, ...]:
        return self.transitions[(s, a)]

    def state_index(self, name: str) -> int:
        return self._state_lookup[name]

    def action_index(self, name: str) -> int:
        return self._action_lookup[name]

    @cached_property
    def _state_lookup(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.state_names)}

    @cached_property
    def _action_lookup(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.action_names)}

    @cached_property
    def rows(self) -> tuple[tuple[tuple[int, tuple[Transition, ...]], ...], ...]:
        """Per state, the ``(action, transitions)`` pairs in available order."""
        return tuple(
            tuple((a, self.transitions[(s, a)]) for a in self.available[s])
            for s in range(self.num_states)
        )

    def edges(self) -> Iterable[tuple[int, int, int]]:
        """Yield every ``(s, a, s')`` with positive probability."""
        for s, row in enumerate(self.rows):
            for a, trans in row:
                for t in trans:
                    if t.prob > 0:
                        yield s, a, t.next_state

    def __hash__(self) -> int:
        return hash((self.state_names, self.action_names, self.available, self.discount))


def absorbing(s: int, action: int = 0) -> tuple[tuple[int, int], tuple[Transition, ...]]:
    """Transition entry for a zero-reward self-loop."""
    return (s, action), (Transition(s, 1.0, 0.0),)


def validate(mdp: Mdp) -> list[Violation]:
    """Check the structural invariants of ``mdp``; an empty list means valid."""
    out: list[Violation] = []
    n, m = mdp.num_states, mdp.num_actions
    if len(mdp.available) != n:
        out.append(Violation("shape", None, None,
                             f"available has {len(mdp.available)} rows for {n} states"))
        return out
    if not (0.0 < mdp.discount <= 1.0):
        out.append(Violation("discount", None, None, f"gamma={mdp.discount} not in (0, 1]"))
    for s in mdp.terminal:
        if not 0 <= s < n:
            out.append(Violation("state-range", s, None, "terminal id out of range"))
    for s in range(n):
        acts = mdp.available[s]
        if not acts:
            out.append(Violation("no-actions", s, None, "available(s) is empty"))
            continue
        if len(set(acts)) != len(acts):
            out.append(Violation("duplicate-action", s, None, f"{acts}"))
        for a in acts:
            if not 0 <= a < m:
                out.append(Violation("action-range", s, a, f"action id >= {m}"))
                continue
            trans = mdp.transitions.get((s, a))
            if trans is None:
                out.append(Violation("missing-transitions", s, a, "no transition list"))
                continue
            total = 0.0
            seen: set[int] = set()
            for t in trans:
                if not 0 <= t.next_state < n:
                    out.append(Violation("state-range", s, a, f"successor {t.next_state}"))
                if t.prob < 0:
                    out.append(Violation("negative-probability", s, a,
                                         f"p({t.next_state})={t.prob}"))
                elif t.prob == 0:
                    out.append(Violation("zero-probability", s, a,
                                         f"successor {t.next_state} listed with p=0"))
                if t.next_state in seen:
                    out.append(Violation("duplicate-successor", s, a, f"{t.next_state}"))
                seen.add(t.next_state)
                if not math.isfinite(t.reward):
                    out.append(Violation("reward", s, a, f"non-finite reward {t.reward}"))
                total += t.prob
            if abs(total - 1.0) > PROB_TOL:
                out.append(Violation("probability-sum", s, a, f"probabilities sum to {total!r}"))
        if s in mdp.terminal:
            ok = (
                len(acts) == 1
                and mdp.transitions.get((s, acts[0])) is not None
                and len(mdp.transitions[(s, acts[0])]) == 1
                and mdp.transitions[(s, acts[0])][0].next_state == s
                and mdp.transitions[(s, acts[0])][0].prob == 1.0
                and mdp.transitions[(s, acts[0])][0].reward == 0.0
                and not mdp.transitions[(s, acts[0])][0].forbidden
            )
            if not ok:
                out.append(Violation("terminal-absorbing", s, None,
                                     "terminal state must have one zero-reward self-loop"))
    return out


def check_valid(mdp: Mdp) -> None:
    report = validate(mdp)
    if report:
        raise InvalidMdpError(report)


def _as_state_set(mdp: Mdp, states: Iterable[int], what: str) -> frozenset[int]:
    out = frozenset(int(s) for s in states)
    bad = [s for s in out if not 0 <= s < mdp.num_states]
    if bad:
        raise ValueError(f"{what} contains out-of-range states {sorted(bad)[:5]}")
    return out


def mdp_neighbors(mdp: Mdp, omega_a: Iterable[int], omega_b: Iterable[int]) -> bool:
    """True iff some single transition leads from ``omega_a`` into ``omega_b``."""
    a_set = _as_state_set(mdp, omega_a, "omega_a")
    b_set = _as_state_set(mdp, omega_b, "omega_b")
    if a_set & b_set:
        raise ValueError("omega_a and omega_b overlap")
    for s in a_set:
        for _, trans in mdp.rows[s]:
            if any(t.prob > 0 and t.next_state in b_set for t in trans):
                return True
    return False


def one_step_frontier(mdp: Mdp, subset: Iterable[int]) -> frozenset[int]:
    """States outside ``subset`` reachable from it in exactly one transition."""
    inside = _as_state_set(mdp, subset, "subset")
    out: set[int] = set()
    for s in inside:
        for _, trans in mdp.rows[s]:
            for t in trans:
                if t.prob != 0 and t.next_state not in inside:
                    out.add(t.next_state)
    return frozenset(out)


@dataclass(frozen=True)
class RegionPartition:
    """Disjoint labelled regions covering all states of an MDP."""

    labels: tuple[str, ...]
    regions: Mapping[str, frozenset[int]]
    order: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        n = len(self.labels)
        covered: set[int] = set()
        for lab, states in self.regions.items():
            if covered & states:
                raise ValueError(f"region {lab!r} overlaps another region")
            covered |= states
            for s in states:
                if not 0 <= s < n or self.labels[s] != lab:
                    raise ValueError(f"labels and regions disagree at state {s}")
        if len(covered) != n:
            raise ValueError("regions do not cover the state space")
        if self.order is not None and sorted(self.order) != sorted(self.regions):
            raise ValueError("order must list every region exactly once")

    @classmethod
    def from_labels(cls, labels: Iterable[str],
                    order: Iterable[str] | None = None) -> RegionPartition:
        labels = tuple(labels)
        groups: dict[str, set[int]] = {}
        for s, lab in enumerate(labels):
            groups.setdefault(lab, set()).add(s)
        regions = {k: frozenset(v) for k, v in groups.items()}
        if order is not None:
            order = tuple(order)
            for k in order:
                regions.setdefault(k, frozenset())
        return cls(labels, regions, order)

    @classmethod
    def from_regions(cls, num_states: int, regions: Mapping[str, Iterable[int]],
                     order: Iterable[str] | None = None) -> RegionPartition:
        labels: list[str | None] = [None] * num_states
        frozen = {}
        for lab, states in regions.items():
            fs = frozenset(int(s) for s in states)
            frozen[lab] = fs
            for s in fs:
                if not 0 <= s < num_states:
                    raise ValueError(f"state {s} out of range")
                if labels[s] is not None:
                    raise ValueError(f"state {s} in regions {labels[s]!r} and {lab!r}")
                labels[s] = lab
        missing = [s for s, lab in enumerate(labels) if lab is None]
        if missing:
            raise ValueError(f"states {missing[:5]} belong to no region")
        return cls(tuple(labels), frozen, None if order is None else tuple(order))

    def __getitem__(self, label: str) -> frozenset[int]:
        return self.regions[label]

    def union(self, labels: Iterable[str]) -> frozenset[int]:
        out: frozenset[int] = frozenset()
        for lab in labels:
            out |= self.regions[lab]
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RegionPartition):
            return NotImplemented
        return self.labels == other.labels and dict(self.regions) == dict(other.regions)

    __hash__ = None  # type: ignore[assignment]


class Policy:
    """Deterministic, possibly partial policy stored as an int array (-1 = undefined)."""

    __slots__ = ("actions",)

    def __init__(self, actions):
        arr = np.array(actions, dtype=np.int64)
        arr.setflags(write=False)
        self.actions = arr

    @classmethod
    def from_mapping(cls, num_states: int, mapping: Mapping[int, int]) -> Policy:
        arr = np.full(num_states, -1, dtype=np.int64)
        for s, a in mapping.items():
            arr[s] = a
        return cls(arr)

    @property
    def domain(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.actions >= 0).tolist())

    def __getitem__(self, s: int) -> int:
        a = int(self.actions[s])
        if a < 0:
            raise KeyError(f"policy undefined at state {s}")
        return a

    def __contains__(self, s: int) -> bool:
        return 0 <= s < len(self.actions) and self.actions[s] >= 0

    def __len__(self) -> int:
        return len(self.actions)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Policy):
            return NotImplemented
        return np.array_equal(self.actions, other.actions)

    __hash__ = None  # type: ignore[assignment]

    def restricted(self, states: Iterable[int]) -> Policy:
        keep = np.full(len(self.actions), -1, dtype=np.int64)
        idx = np.fromiter(states, dtype=np.int64)
        keep[idx] = self.actions[idx]
        return Policy(keep)

    def check_legal(self, mdp: Mdp) -> None:
        for s in np.flatnonzero(self.actions >= 0):
            if int(self.actions[s]) not in mdp.available[s]:
                raise ValueError(f"action {int(self.actions[s])} not available at state {s}")

    def __repr__(self) -> str:
        return f"Policy(defined on {int((self.actions >= 0).sum())}/{len(self.actions)} states)"


def undefined_values(num_states: int) -> np.ndarray:
    """A value function with every entry undefined (NaN)."""
    return np.full(num_states, np.nan)
