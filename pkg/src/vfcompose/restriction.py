"""Restriction of an MDP to a region, with a boundary term on exits.

The restricted model keeps the region ("core") states and adds every state
reachable from it in one step as an absorbing, zero-reward state. A transition
from a core state into an added state ``s'`` earns ``r(s, s', a) + v_+(s')``,
or is flagged forbidden when ``v_+(s')`` is :data:`FORBIDDEN`.
"""
from __future__ import annotations

import enum
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass

import numpy as np

from .mdp import Mdp, Transition, one_step_frontier


class _Forbidden(enum.Enum):
    FORBIDDEN = "forbidden"

    def __repr__(self) -> str:
        return "FORBIDDEN"


FORBIDDEN = _Forbidden.FORBIDDEN


class BoundaryValue(Mapping):
    """Map from frontier state to a finite float or :data:`FORBIDDEN`."""

    def __init__(self, entries: Mapping[int, float | _Forbidden]):
        clean: dict[int, float | _Forbidden] = {}
        for s, val in entries.items():
            if val is FORBIDDEN:
                clean[int(s)] = FORBIDDEN
            else:
                x = float(val)
                if not np.isfinite(x):
                    raise ValueError(f"boundary value at state {s} is not finite: {x}")
                clean[int(s)] = x
        self._entries = clean

    def __getitem__(self, s: int) -> float | _Forbidden:
        return self._entries[s]

    def __iter__(self) -> Iterator[int]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, BoundaryValue):
            return self._entries == other._entries
        return NotImplemented

    def __repr__(self) -> str:
        n_forb = sum(v is FORBIDDEN for v in self._entries.values())
        return f"BoundaryValue({len(self)} entries, {n_forb} forbidden)"

    def to_json(self, mdp: Mdp) -> dict[str, str | float]:
        return {
            mdp.state_names[s]: ("forbidden" if v is FORBIDDEN else v)
            for s, v in sorted(self._entries.items())
        }

    @classmethod
    def from_json(cls, mdp: Mdp, data: Mapping[str, str | float]) -> BoundaryValue:
        out: dict[int, float | _Forbidden] = {}
        for name, val in data.items():
            s = mdp.state_index(name)
            if isinstance(val, str):
                if val != "forbidden":
                    raise ValueError(f"unknown boundary marker {val!r}")
                out[s] = FORBIDDEN
            else:
                out[s] = float(val)
        return cls(out)


@dataclass(frozen=True)
class RestrictedMdp:
    mdp: Mdp
    core: frozenset[int]
    added: frozenset[int]
    back_map: np.ndarray

    def to_original(self, values, num_states: int, fill: float = np.nan) -> np.ndarray:
        """Scatter restricted-coordinate values of core states back to the source."""
        out = np.full(num_states, fill)
        values = np.asarray(values)
        idx = np.array(sorted(self.core), dtype=np.int64)
        out[self.back_map[idx]] = values[idx]
        return out

    def from_original(self, values) -> np.ndarray:
        """Gather source-coordinate values onto the restricted state set."""
        return np.asarray(values, dtype=float)[self.back_map]

    def forward(self) -> dict[int, int]:
        return {int(o): i for i, o in enumerate(self.back_map)}


def restrict(mdp: Mdp, region: Iterable[int], v_plus: Mapping[int, object]) -> RestrictedMdp:
    """Build the restriction of ``mdp`` to ``region`` with boundary ``v_plus``.

    New ids list the region states first, then the added frontier states, each
    group in increasing original id. Restricting to every state is the
    identity.
    """
    core_orig = sorted(set(int(s) for s in region))
    if not core_orig:
        raise ValueError("cannot restrict to an empty region")
    if core_orig[0] < 0 or core_orig[-1] >= mdp.num_states:
        raise ValueError("region contains out-of-range states")
    frontier = sorted(one_step_frontier(mdp, core_orig))
    missing = [s for s in frontier if s not in v_plus]
    if missing:
        names = [mdp.state_names[s] for s in missing[:5]]
        raise ValueError(f"boundary value missing for frontier states {names}")

    back = core_orig + frontier
    fwd = {o: i for i, o in enumerate(back)}
    n_core = len(core_orig)
    added_orig = set(frontier)

    available: list[tuple[int, ...]] = []
    trans: dict[tuple[int, int], tuple[Transition, ...]] = {}
    for i, s in enumerate(core_orig):
        available.append(mdp.available[s])
        for a in mdp.available[s]:
            new = []
            for t in mdp.transitions[(s, a)]:
                j = fwd[t.next_state]
                if t.next_state in added_orig:
                    extra = v_plus[t.next_state]
                    if extra is FORBIDDEN:
                        new.append(Transition(j, t.prob, t.reward, True))
                    else:
                        new.append(Transition(j, t.prob, t.reward + float(extra), t.forbidden))
                elif j == t.next_state:
                    new.append(t)
                else:
                    new.append(Transition(j, t.prob, t.reward, t.forbidden))
            trans[(i, a)] = tuple(new)
    for k, s in enumerate(frontier):
        i = n_core + k
        # absorbing with zero reward; keep the source's action id when it is terminal
        a = mdp.available[s][0] if s in mdp.terminal else 0
        available.append((a,))
        trans[(i, a)] = (Transition(i, 1.0, 0.0),)

    terminal = frozenset(fwd[s] for s in core_orig if s in mdp.terminal) | frozenset(
        range(n_core, len(back)))
    sub = Mdp(
        tuple(mdp.state_names[s] for s in back),
        mdp.action_names,
        tuple(available),
        trans,
        mdp.discount,
        terminal,
    )
    return RestrictedMdp(
        sub,
        frozenset(range(n_core)),
        frozenset(range(n_core, len(back))),
        np.array(back, dtype=np.int64),
    )


def forbidden_boundary(mdp: Mdp, region: Iterable[int]) -> BoundaryValue:
    return BoundaryValue({s: FORBIDDEN for s in one_step_frontier(mdp, region)})


def constant_boundary(mdp: Mdp, region_alpha: Iterable[int], omega_beta: Iterable[int],
                      value: float = 0.0) -> BoundaryValue:
    """Same reward for every exit into ``omega_beta``; other exits forbidden.

    This is the boundary of a locally optimal sub-controller that only cares
    about reaching the next region.
    """
    beta = frozenset(omega_beta)
    return BoundaryValue({
        s: (float(value) if s in beta else FORBIDDEN)
        for s in one_step_frontier(mdp, region_alpha)
    })


def _checked_entry(v, s: int, mdp: Mdp, what: str) -> float:
    x = float(v[s])
    if not np.isfinite(x):
        raise ValueError(f"{what} is not finite at frontier state {mdp.state_names[s]} ({x})")
    return x


def continuation_boundary(mdp: Mdp, region_alpha: Iterable[int], omega_beta: Iterable[int],
                          v_beta) -> BoundaryValue:
    """``gamma * v_beta(s')`` on exits into ``omega_beta``, forbidden elsewhere.

    ``v_beta`` is indexed by original state ids.
    """
    beta = frozenset(omega_beta)
    out: dict[int, float | _Forbidden] = {}
    for s in one_step_frontier(mdp, region_alpha):
        if s in beta:
            out[s] = mdp.discount * _checked_entry(v_beta, s, mdp, "v_beta")
        else:
            out[s] = FORBIDDEN
    return BoundaryValue(out)


def mixture_boundary(components, mdp: Mdp, region_alpha: Iterable[int],
                     omega_beta: Iterable[int]) -> BoundaryValue:
    """Continuation boundary for a weighted mix of successor value functions.

    ``components`` is a sequence of ``(weight, v)`` pairs; weights must be
    non-negative and sum to one.
    """
    components = [(float(w), v) for w, v in components]
    if not components:
        raise ValueError("mixture needs at least one component")
    if any(w < 0 for w, _ in components):
        raise ValueError("mixture weights must be non-negative")
    total = sum(w for w, _ in components)
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"mixture weights sum to {total}, not 1")
    beta = frozenset(omega_beta)
    out: dict[int, float | _Forbidden] = {}
    for s in one_step_frontier(mdp, region_alpha):
        if s in beta:
            mix = sum(w * _checked_entry(v, s, mdp, f"component {k}")
                      for k, (w, v) in enumerate(components))
            out[s] = mdp.discount * mix
        else:
            out[s] = FORBIDDEN
    return BoundaryValue(out)
