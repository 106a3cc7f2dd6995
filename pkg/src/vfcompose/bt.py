"""A small behaviour-tree layer: tick semantics, operating regions, execution.

Ticks are memory-less. The tree is re-evaluated from the root at every step and the
``Running`` action leaf it lands on picks the sub-policy that acts.
"""
from __future__ import annotations

import enum
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .mdp import Mdp, Policy, RegionPartition

Predicate = Callable[[int], bool]


class Status(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    RUNNING = "running"


class Kind(enum.Enum):
    SEQUENCE = "sequence"
    FALLBACK = "fallback"
    CONDITION = "condition"
    ACTION = "action"


@dataclass(frozen=True)
class TickResult:
    status: Status
    active_action: str | None = None

    def __post_init__(self):
        if (self.status is Status.RUNNING) != (self.active_action is not None):
            raise ValueError("an active action is reported exactly when the tree is running")


@dataclass(frozen=True, eq=False)
class BtNode:
    """Tree node. ``name`` is the predicate name for conditions and the
    policy identifier for actions."""

    kind: Kind
    children: tuple[BtNode, ...] = ()
    name: str | None = None
    predicate: Predicate | None = None

    def __post_init__(self):
        leaf = self.kind in (Kind.CONDITION, Kind.ACTION)
        if leaf and self.children:
            raise ValueError(f"{self.kind.value} nodes are leaves")
        if not leaf and not self.children:
            raise ValueError(f"{self.kind.value} node needs at least one child")
        if self.kind is Kind.CONDITION and self.predicate is None:
            raise ValueError("condition node needs a predicate")
        if self.kind is Kind.ACTION and not self.name:
            raise ValueError("action node needs a policy identifier")

    def actions(self) -> list[str]:
        """Action identifiers in left-to-right order, without repeats."""
        if self.kind is Kind.ACTION:
            return [self.name]
        out: list[str] = []
        for c in self.children:
            for a in c.actions():
                if a not in out:
                    out.append(a)
        return out


def sequence(*children: BtNode) -> BtNode:
    return BtNode(Kind.SEQUENCE, tuple(children))


def fallback(*children: BtNode) -> BtNode:
    return BtNode(Kind.FALLBACK, tuple(children))


def condition(name: str, predicate: Predicate) -> BtNode:
    return BtNode(Kind.CONDITION, name=name, predicate=predicate)


def action(policy_id: str) -> BtNode:
    return BtNode(Kind.ACTION, name=policy_id)


_SUCCESS = TickResult(Status.SUCCESS)
_FAILURE = TickResult(Status.FAILURE)


def tick(root: BtNode, s: int) -> TickResult:
    kind = root.kind
    if kind is Kind.ACTION:
        return TickResult(Status.RUNNING, root.name)
    if kind is Kind.CONDITION:
        return _SUCCESS if root.predicate(s) else _FAILURE
    # a sequence stops at the first child that does not succeed, a fallback at
    # the first that does not fail
    passthrough = Status.SUCCESS if kind is Kind.SEQUENCE else Status.FAILURE
    for child in root.children:
        res = tick(child, s)
        if res.status is not passthrough:
            return res
    return _SUCCESS if kind is Kind.SEQUENCE else _FAILURE


class ControllerGapError(ValueError):
    """Non-terminal states where the tree does not run any action."""

    def __init__(self, states: list[int], mdp: Mdp):
        self.states = states
        names = [mdp.state_names[s] for s in states[:10]]
        more = f" (+{len(states) - 10} more)" if len(states) > 10 else ""
        super().__init__(f"tree runs no action at non-terminal states {names}{more}")


def operating_regions(root: BtNode, mdp: Mdp, done_label: str | None = "done",
                      order: tuple[str, ...] | None = None) -> RegionPartition:
    """Partition the states by the action leaf that a tick selects.

    Terminal states go to ``done_label``. With ``done_label=None`` they are
    labelled like any other state when the tree runs there, and fall back to
    ``"done"`` otherwise.
    """
    labels: list[str] = []
    gaps: list[int] = []
    for s in range(mdp.num_states):
        terminal = s in mdp.terminal
        if terminal and done_label is not None:
            labels.append(done_label)
            continue
        res = tick(root, s)
        if res.status is Status.RUNNING:
            labels.append(res.active_action)
        elif terminal:
            labels.append("done")
        else:
            gaps.append(s)
            labels.append("")
    if gaps:
        raise ControllerGapError(gaps, mdp)
    if order is None:
        present = set(labels)
        order = tuple(a for a in root.actions() if a in present)
        order += tuple(sorted(present - set(order)))
    return RegionPartition.from_labels(labels, order)


class PolicyUndefinedError(LookupError):
    pass


@dataclass(frozen=True)
class Step:
    state: int
    action: int
    reward: float
    region: str


@dataclass(frozen=True)
class Crossing:
    step: int
    state: int
    from_region: str
    to_region: str


@dataclass
class Trajectory:
    steps: list[Step] = field(default_factory=list)
    crossings: list[Crossing] = field(default_factory=list)
    final_state: int | None = None
    terminated: bool = False

    @property
    def total_reward(self) -> float:
        return float(sum(st.reward for st in self.steps))

    def __len__(self) -> int:
        return len(self.steps)


def _active(root: BtNode, mdp: Mdp, s: int) -> str:
    if s in mdp.terminal:
        return "done"
    res = tick(root, s)
    if res.status is not Status.RUNNING:
        raise ControllerGapError([s], mdp)
    return res.active_action


def execute(root: BtNode, policies: Mapping[str, Policy], mdp: Mdp, start: int,
            max_steps: int = 1000, seed: int | np.random.Generator = 0) -> Trajectory:
    """Roll out the tree-selected sub-policies from ``start``.

    Successors are sampled with a seeded generator; each step records the
    state, the action taken, its reward and the active region. Crossings are
    logged whenever the next state belongs to a different region.
    """
    rng = np.random.default_rng(seed)
    traj = Trajectory()
    s = int(start)
    region = _active(root, mdp, s)
    for t in range(max_steps):
        if s in mdp.terminal:
            break
        pol = policies.get(region)
        if pol is None or s not in pol:
            raise PolicyUndefinedError(
                f"policy {region!r} undefined at state {mdp.state_names[s]}")
        a = pol[s]
        outs = mdp.transitions[(s, a)]
        if len(outs) == 1:
            tr = outs[0]
        else:
            probs = np.array([o.prob for o in outs])
            tr = outs[int(rng.choice(len(outs), p=probs / probs.sum()))]
        reward = -np.inf if tr.forbidden else tr.reward
        traj.steps.append(Step(s, a, reward, region))
        s = tr.next_state
        nxt = _active(root, mdp, s)
        if nxt != region:
            traj.crossings.append(Crossing(t + 1, s, region, nxt))
        region = nxt
    traj.final_state = s
    traj.terminated = s in mdp.terminal
    return traj


def bt_from_json(data: Mapping[str, Any], predicates: Mapping[str, Predicate]) -> BtNode:
    """Build a tree from nested ``{kind, predicate, action, children}`` objects."""
    if not isinstance(data, Mapping):
        raise ValueError("tree node must be a JSON object")
    allowed = {"kind", "predicate", "action", "children"}
    extra = set(data) - allowed
    if extra:
        raise ValueError(f"unknown tree node fields {sorted(extra)}")
    try:
        kind = Kind(data["kind"])
    except (KeyError, ValueError):
        raise ValueError(f"bad node kind {data.get('kind')!r}") from None
    if kind is Kind.CONDITION:
        name = data.get("predicate")
        if name not in predicates:
            raise ValueError(f"unknown predicate {name!r}; known: {sorted(predicates)}")
        return condition(name, predicates[name])
    if kind is Kind.ACTION:
        return action(data.get("action"))
    kids = tuple(bt_from_json(c, predicates) for c in data.get("children", ()))
    return BtNode(kind, kids)


def bt_to_json(node: BtNode) -> dict[str, Any]:
    if node.kind is Kind.CONDITION:
        return {"kind": node.kind.value, "predicate": node.name}
    if node.kind is Kind.ACTION:
        return {"kind": node.kind.value, "action": node.name}
    return {"kind": node.kind.value, "children": [bt_to_json(c) for c in node.children]}


def push_box_tree(predicates: Mapping[str, Predicate]) -> BtNode:
    """Push when close to the box, otherwise move towards it."""
    return fallback(
        sequence(condition("close_to_box", predicates["close_to_box"]), action("push")),
        action("move_to"),
    )


def two_rooms_tree(predicates: Mapping[str, Predicate]) -> BtNode:
    return fallback(
        sequence(condition("in_room2", predicates["in_room2"]), action("room2")),
        action("room1"),
    )
