"""Scenario generators: grid navigation worlds and a tabular push-box world.

Grid coordinates are ``(x, y)`` with ``y`` growing downwards, so ``N`` is
``y - 1``. Moves into walls or off the grid leave the agent in place.
"""
from __future__ import annotations

from collections import deque
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .mdp import Mdp, Policy, RegionPartition, Transition, absorbing

Cell = tuple[int, int]

ACTIONS = ("N", "S", "E", "W")
DELTAS: dict[str, Cell] = {"N": (0, -1), "S": (0, 1), "E": (1, 0), "W": (-1, 0)}
# slip directions: perpendicular moves
_PERP = {"N": ("E", "W"), "S": ("W", "E"), "E": ("S", "N"), "W": ("N", "S")}

MAP_CHARS = {"#": "wall", ".": "floor", "D": "door", "A": "target A", "B": "target B"}

CANONICAL_TWO_ROOMS = """\
############
#.....D.A..#
#.....#....#
#.....#....#
#.....#....#
#.....#....#
#.....#....#
#.....#....#
#.....#....#
#.....#....#
#.....D.B..#
############
"""

CHAIN_3 = """\
#############
#111#222#333#
#1112222#333#
#111#2223333#
#111#222#33G#
#############
"""

TREE_7 = """\
#####################
#111#222#####333#444#
#111#222#####333#444#
##5###5#######6###6##
#5555555#####6666666#
#5555555#####6666666#
####7#########7######
#7777777777777777777#
#777777777G777777777#
#####################
"""


def state_name(cell: Cell) -> str:
    return f"x{cell[0]}y{cell[1]}"


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    walls: frozenset[Cell] = frozenset()
    doors: frozenset[Cell] = frozenset()
    terminals: Mapping[Cell, str] = field(default_factory=dict)
    step_reward: float = -1.0
    slip: float = 0.0

    def __post_init__(self):
        cells = [*self.walls, *self.doors, *self.terminals]
        for x, y in cells:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"cell {(x, y)} outside a {self.width}x{self.height} grid")
        if self.walls & self.doors or self.walls & set(self.terminals) \
                or self.doors & set(self.terminals):
            raise ValueError("walls, doors and terminals must be disjoint")
        if not 0.0 <= self.slip <= 0.5:
            raise ValueError("slip must lie in [0, 0.5]")

    def in_bounds(self, c: Cell) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def free(self, c: Cell) -> bool:
        return self.in_bounds(c) and c not in self.walls

    @cached_property
    def cells(self) -> tuple[Cell, ...]:
        """Free cells in row-major order; this is the state order."""
        return tuple((x, y) for y in range(self.height) for x in range(self.width)
                     if (x, y) not in self.walls)

    def target(self, label: str) -> Cell:
        found = [c for c, lab in self.terminals.items() if lab == label]
        if len(found) != 1:
            raise ValueError(f"expected one cell labelled {label!r}, found {len(found)}")
        return found[0]


def parse_ascii_map(text: str, step_reward: float = -1.0, slip: float = 0.0) -> GridSpec:
    """Read a map drawn with ``#`` wall, ``.`` floor, ``D`` door, ``A``/``B`` targets."""
    lines = [ln.rstrip("\n") for ln in text.strip("\n").splitlines()]
    if not lines:
        raise ValueError("empty map")
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise ValueError("map rows have different lengths")
    walls, doors, terminals = set(), set(), {}
    for y, row in enumerate(lines):
        for x, ch in enumerate(row):
            if ch not in MAP_CHARS:
                raise ValueError(f"unknown map character {ch!r} at {(x, y)}")
            if ch == "#":
                walls.add((x, y))
            elif ch == "D":
                doors.add((x, y))
            elif ch in "AB":
                terminals[(x, y)] = ch
    return GridSpec(width, len(lines), frozenset(walls), frozenset(doors), terminals,
                    step_reward, slip)


def render_ascii_map(spec: GridSpec) -> str:
    rows = []
    for y in range(spec.height):
        row = []
        for x in range(spec.width):
            c = (x, y)
            row.append("#" if c in spec.walls else "D" if c in spec.doors
                       else spec.terminals.get(c, "."))
        rows.append("".join(row))
    return "\n".join(rows) + "\n"


def _step(spec: GridSpec, c: Cell, move: str) -> Cell:
    dx, dy = DELTAS[move]
    nxt = (c[0] + dx, c[1] + dy)
    return nxt if spec.free(nxt) else c


def _grid_mdp(spec: GridSpec, goals: Iterable[Cell], discount: float = 1.0) -> Mdp:
    goals = set(goals)
    cells = spec.cells
    index = {c: i for i, c in enumerate(cells)}
    available, trans = [], {}
    for i, c in enumerate(cells):
        if c in goals:
            key, val = absorbing(i)
            available.append((0,))
            trans[key] = val
            continue
        available.append(tuple(range(len(ACTIONS))))
        for a, move in enumerate(ACTIONS):
            probs: dict[int, float] = {}
            outcomes = [(move, 1.0 - spec.slip)]
            if spec.slip > 0:
                outcomes += [(m, spec.slip / 2) for m in _PERP[move]]
            for m, p in outcomes:
                j = index[_step(spec, c, m)]
                probs[j] = probs.get(j, 0.0) + p
            trans[(i, a)] = tuple(Transition(j, p, spec.step_reward)
                                  for j, p in sorted(probs.items()))
    return Mdp(tuple(state_name(c) for c in cells), ACTIONS, tuple(available), trans,
               discount, frozenset(index[g] for g in goals))


def _components(spec: GridSpec, cells: Iterable[Cell]) -> list[set[Cell]]:
    todo = set(cells)
    comps = []
    while todo:
        start = todo.pop()
        comp, queue = {start}, deque([start])
        while queue:
            c = queue.popleft()
            for dx, dy in DELTAS.values():
                n = (c[0] + dx, c[1] + dy)
                if n in todo:
                    todo.discard(n)
                    comp.add(n)
                    queue.append(n)
        comps.append(comp)
    return comps


def build_two_rooms(spec: GridSpec, target: str = "A") -> tuple[Mdp, RegionPartition]:
    """Two rooms joined by two doors; the episode ends at ``target``.

    Regions: ``room1`` (without targets) and ``room2`` (with targets and both
    doors).
    """
    if target not in ("A", "B"):
        raise ValueError("target must be 'A' or 'B'")
    if len(spec.doors) != 2:
        raise ValueError("two-rooms map needs exactly two door cells")
    labels = set(spec.terminals.values())
    if target not in labels:
        raise ValueError(f"map has no {target!r} cell")
    floor = [c for c in spec.cells if c not in spec.doors]
    comps = _components(spec, floor)
    if len(comps) != 2:
        raise ValueError(f"expected two rooms separated by the doors, found {len(comps)}")
    room2 = next((c for c in comps if set(spec.terminals) & c), None)
    if room2 is None or not set(spec.terminals) <= room2:
        raise ValueError("targets A and B must both lie in the same room")
    room2 = room2 | set(spec.doors)
    mdp = _grid_mdp(spec, [spec.target(target)])
    idx = {c: i for i, c in enumerate(spec.cells)}
    part = RegionPartition.from_regions(
        mdp.num_states,
        {"room1": [idx[c] for c in spec.cells if c not in room2],
         "room2": [idx[c] for c in room2]},
        order=("room1", "room2"),
    )
    return mdp, part


def canonical_two_rooms(slip: float = 0.0) -> GridSpec:
    return parse_ascii_map(CANONICAL_TWO_ROOMS, slip=slip)


def door_cells(spec: GridSpec) -> tuple[Cell, Cell]:
    """The doors ordered (upper, lower)."""
    a, b = sorted(spec.doors, key=lambda c: (c[1], c[0]))
    return a, b


def build_region_maze(layout: str, step_reward: float = -1.0,
                      slip: float = 0.0) -> tuple[Mdp, RegionPartition, GridSpec]:
    """Grid maze whose floor cells carry region digits; ``G`` is the goal.

    The goal joins the highest-numbered region. Regions are ordered by digit.
    """
    lines = [ln for ln in layout.strip("\n").splitlines()]
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise ValueError("layout rows have different lengths")
    walls, region_of, goal = set(), {}, None
    for y, row in enumerate(lines):
        for x, ch in enumerate(row):
            if ch == "#":
                walls.add((x, y))
            elif ch == "G":
                goal = (x, y)
            elif ch.isdigit():
                region_of[(x, y)] = ch
            else:
                raise ValueError(f"unknown layout character {ch!r}")
    if goal is None:
        raise ValueError("layout has no goal cell")
    labels = sorted(set(region_of.values()))
    region_of[goal] = labels[-1]
    spec = GridSpec(width, len(lines), frozenset(walls), frozenset(), {goal: "G"},
                    step_reward, slip)
    mdp = _grid_mdp(spec, [goal])
    part = RegionPartition.from_labels([region_of[c] for c in spec.cells], order=labels)
    return mdp, part, spec


def build_corridor(length: int = 3, step_reward: float = -1.0,
                   discount: float = 1.0) -> Mdp:
    """One-row corridor with the goal at the right end; actions are W and E."""
    names = tuple(f"c{i}" for i in range(length))
    available, trans = [], {}
    for i in range(length):
        if i == length - 1:
            available.append((0,))
            trans[(i, 0)] = (Transition(i, 1.0, 0.0),)
            continue
        available.append((0, 1))
        trans[(i, 0)] = (Transition(max(i - 1, 0), 1.0, step_reward),)
        trans[(i, 1)] = (Transition(i + 1, 1.0, step_reward),)
    return Mdp(names, ("W", "E"), tuple(available), trans, discount,
               frozenset({length - 1}))


def shortest_path_oracle(spec: GridSpec, start: Cell, goal: Cell) -> int:
    """Breadth-first-search step count between two free cells."""
    if not spec.free(start) or not spec.free(goal):
        raise ValueError("start and goal must be free cells")
    dist = {start: 0}
    queue = deque([start])
    while queue:
        c = queue.popleft()
        if c == goal:
            return dist[c]
        for dx, dy in DELTAS.values():
            n = (c[0] + dx, c[1] + dy)
            if spec.free(n) and n not in dist:
                dist[n] = dist[c] + 1
                queue.append(n)
    raise ValueError(f"{goal} is unreachable from {start}")


def bfs_distances(spec: GridSpec, goal: Cell) -> dict[Cell, int]:
    dist = {goal: 0}
    queue = deque([goal])
    while queue:
        c = queue.popleft()
        for dx, dy in DELTAS.values():
            n = (c[0] + dx, c[1] + dy)
            if spec.free(n) and n not in dist:
                dist[n] = dist[c] + 1
                queue.append(n)
    return dist


def grid_predicates(spec: GridSpec, part: RegionPartition) -> dict[str, Callable[[int], bool]]:
    """Named state predicates for behaviour trees over a grid world."""
    preds: dict[str, Callable[[int], bool]] = {}
    for lab, states in part.regions.items():
        preds[f"in_{lab}"] = (lambda st: lambda s: s in st)(states)
    return preds


# --- push-box -------------------------------------------------------------

SUCCESS = "success"
FAIL = "fail"


@dataclass(frozen=True)
class PushBoxSpec:
    width: int = 6
    height: int = 6
    goal_cells: frozenset[Cell] | None = None
    region_distance: float = 2.0
    step_reward: float = -0.001
    fail_reward: float = -1.0
    success_reward: float = 1.0
    dist_shaping: bool = True
    obstacles: frozenset[Cell] = frozenset()
    discount: float = 1.0
    budget: int = 4096

    def __post_init__(self):
        if self.goal_cells is None:
            object.__setattr__(self, "goal_cells",
                               frozenset((x, 0) for x in range(self.width)))
        if self.width * self.height > self.budget:
            raise ValueError(f"{self.width}x{self.height} grid exceeds budget {self.budget}")
        if self.region_distance <= 0:
            raise ValueError("region_distance must be positive")
        if not self.goal_cells:
            raise ValueError("goal_cells must not be empty")
        self.goal_edge  # validates the edge

    @property
    def goal_edge(self) -> str:
        edges = {
            "N": all(y == 0 for _, y in self.goal_cells),
            "S": all(y == self.height - 1 for _, y in self.goal_cells),
            "W": all(x == 0 for x, _ in self.goal_cells),
            "E": all(x == self.width - 1 for x, _ in self.goal_cells),
        }
        for k in "NSWE":
            if edges[k]:
                return k
        raise ValueError("goal cells must lie on one edge of the grid")


_OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}


class PushBoxLayout:
    """Cell geometry and state numbering of a push-box instance.

    Non-terminal states are ``(agent, box)`` pairs with the box neither on a
    goal cell nor stuck; two absorbing sinks, ``success`` and ``fail``, close
    the episode. A box is stuck when it touches the edge opposite the goal or
    sits in a corner outside the goal area: it can never be pushed back.
    """

    def __init__(self, spec: PushBoxSpec):
        self.spec = spec
        self.free_cells = tuple(
            (x, y) for y in range(spec.height) for x in range(spec.width)
            if (x, y) not in spec.obstacles)
        self.edge = spec.goal_edge
        pairs = [(ag, bx) for bx in self.free_cells for ag in self.free_cells
                 if ag != bx and not self.box_terminal(bx)]
        self.pairs = tuple(pairs)
        self.index = {p: i for i, p in enumerate(pairs)}
        self.success = len(pairs)
        self.fail = len(pairs) + 1
        self.num_states = len(pairs) + 2
        self.push_dir = self.edge
        self.norm = max(self.goal_distance(c) for c in self.free_cells) or 1.0

    def free(self, c: Cell) -> bool:
        return (0 <= c[0] < self.spec.width and 0 <= c[1] < self.spec.height
                and c not in self.spec.obstacles)

    def on_goal(self, box: Cell) -> bool:
        return box in self.spec.goal_cells

    def dead(self, box: Cell) -> bool:
        if self.on_goal(box):
            return False
        x, y = box
        w, h = self.spec.width - 1, self.spec.height - 1
        far_edge = {"N": y == h, "S": y == 0, "W": x == w, "E": x == 0}[self.edge]
        corner = x in (0, w) and y in (0, h)
        return far_edge or corner

    def box_terminal(self, box: Cell) -> bool:
        return self.on_goal(box) or self.dead(box)

    def goal_distance(self, box: Cell) -> float:
        return float(min(abs(box[0] - g[0]) + abs(box[1] - g[1]) for g in self.spec.goal_cells))

    def state_of(self, agent: Cell, box: Cell) -> int:
        """State id of a configuration; terminal boxes map onto the sinks."""
        if agent == box:
            raise ValueError("agent and box cannot share a cell")
        if self.on_goal(box):
            return self.success
        if self.dead(box):
            return self.fail
        return self.index[(agent, box)]

    def cells_of(self, s: int) -> tuple[Cell, Cell]:
        return self.pairs[s]

    def chebyshev(self, s: int) -> int:
        (ax, ay), (bx, by) = self.pairs[s]
        return max(abs(ax - bx), abs(ay - by))

    def close(self, s: int) -> bool:
        return s < len(self.pairs) and self.chebyshev(s) <= self.spec.region_distance

    def move(self, agent: Cell, box: Cell, action: str) -> tuple[Cell, Cell]:
        dx, dy = DELTAS[action]
        nxt = (agent[0] + dx, agent[1] + dy)
        if not self.free(nxt):
            return agent, box
        if nxt == box:
            nb = (box[0] + dx, box[1] + dy)
            if not self.free(nb):
                return agent, box
            return nxt, nb
        return nxt, box

    def names(self) -> tuple[str, ...]:
        pair_names = [f"a{ax}_{ay}-b{bx}_{by}" for (ax, ay), (bx, by) in self.pairs]
        return tuple(pair_names + [SUCCESS, FAIL])


def build_push_box(spec: PushBoxSpec) -> tuple[Mdp, RegionPartition]:
    """Tabular push-box world with regions ``move_to``, ``push`` and ``done``.

    ``push`` holds configurations with the agent within Chebyshev distance
    ``region_distance`` of the box; ``done`` holds the two sinks.
    """
    lay = PushBoxLayout(spec)
    available, trans = [], {}
    for i, (ag, bx) in enumerate(lay.pairs):
        available.append(tuple(range(len(ACTIONS))))
        for a, act in enumerate(ACTIONS):
            ag2, bx2 = lay.move(ag, bx, act)
            r = spec.step_reward
            if spec.dist_shaping and bx2 != bx:
                r += (lay.goal_distance(bx) - lay.goal_distance(bx2)) / lay.norm
            j = lay.state_of(ag2, bx2)
            if j == lay.success:
                r += spec.success_reward
            elif j == lay.fail:
                r += spec.fail_reward
            trans[(i, a)] = (Transition(j, 1.0, r),)
    for sink in (lay.success, lay.fail):
        key, val = absorbing(sink)
        available.append((0,))
        trans[key] = val
    mdp = Mdp(lay.names(), ACTIONS, tuple(available), trans, spec.discount,
              frozenset({lay.success, lay.fail}))
    labels = ["push" if lay.close(s) else "move_to" for s in range(len(lay.pairs))]
    labels += ["done", "done"]
    part = RegionPartition.from_labels(labels, order=("move_to", "push", "done"))
    return mdp, part


def _bfs_step(lay: PushBoxLayout, agent: Cell, box: Cell, target: Cell) -> str | None:
    """First move of a shortest path around obstacles and the box, or None.

    Ties go to the earliest move in ``ACTIONS``, so vertical moves win.
    """
    if not lay.free(target) or target == box:
        return None
    dist = {target: 0}
    queue = deque([target])
    while queue:
        c = queue.popleft()
        for dx, dy in DELTAS.values():
            n = (c[0] + dx, c[1] + dy)
            if lay.free(n) and n != box and n not in dist:
                dist[n] = dist[c] + 1
                queue.append(n)
    if agent not in dist:
        return None
    for m in ACTIONS:
        dx, dy = DELTAS[m]
        n = (agent[0] + dx, agent[1] + dy)
        if dist.get(n, -1) == dist[agent] - 1:
            return m
    return None


_CLOCKWISE = {"N": "E", "E": "S", "S": "W", "W": "N"}


def _push_direction(lay: PushBoxLayout, box: Cell) -> str:
    """Goal-ward push when possible, otherwise a sideways shove (clockwise first)."""
    p = lay.push_dir
    for d in (p, _CLOCKWISE[p], _OPPOSITE[_CLOCKWISE[p]]):
        dx, dy = DELTAS[d]
        if lay.free((box[0] + dx, box[1] + dy)) and lay.free((box[0] - dx, box[1] - dy)):
            return d
    return p


def manual_push_action(lay: PushBoxLayout, agent: Cell, box: Cell) -> str:
    """Hand-written pusher: get behind the box, then push it straight at the goal.

    Deliberately naive: standing between the box and the goal it only ever
    sidesteps clockwise of the push direction, and when that side is walled
    off it walks into the box, shoving it away from the goal.
    """
    push = _push_direction(lay, box)
    pdx, pdy = DELTAS[push]
    behind = (box[0] - pdx, box[1] - pdy)
    if agent == behind:
        return push
    in_front = (box[0] + pdx, box[1] + pdy)
    if agent == in_front:
        side = _CLOCKWISE[push]
        sdx, sdy = DELTAS[side]
        if lay.free((agent[0] + sdx, agent[1] + sdy)):
            return side
        return _OPPOSITE[push]
    m = _bfs_step(lay, agent, box, behind)
    if m is not None:
        return m
    return push


def manual_push_policy(spec: PushBoxSpec) -> Policy:
    """The hand-written pusher on every non-terminal ``push`` state."""
    lay = PushBoxLayout(spec)
    acts = np.full(lay.num_states, -1, dtype=np.int64)
    for s, (ag, bx) in enumerate(lay.pairs):
        if lay.close(s):
            acts[s] = ACTIONS.index(manual_push_action(lay, ag, bx))
    return Policy(acts)


def push_box_predicates(spec: PushBoxSpec) -> dict[str, Callable[[int], bool]]:
    lay = PushBoxLayout(spec)
    return {
        "close_to_box": lay.close,
        "box_at_goal": lambda s: s == lay.success,
        "episode_over": lambda s: s in (lay.success, lay.fail),
    }


def shaping_total(lay: PushBoxLayout, boxes: Iterable[Cell]) -> float:
    """Sum of the distance-progress terms along a sequence of box cells."""
    boxes = list(boxes)
    return sum((lay.goal_distance(a) - lay.goal_distance(b)) / lay.norm
               for a, b in zip(boxes, boxes[1:]))




def crafted_push_box_spec() -> PushBoxSpec:
    """6x6 push-box with two pillars in the box's path.

    The pillars make the approach side matter, so a move-to controller that
    only aims at the nearest handover cell loses value, and the hand-written
    pusher fails from some of the handovers it is given.
    """
    return PushBoxSpec(obstacles=frozenset({(2, 1), (2, 3)}))
