from collections import deque

import pytest

from vfcompose.envs import (
    build_push_box,
    build_two_rooms,
    canonical_two_rooms,
    crafted_push_box_spec,
    PushBoxSpec,
)
from vfcompose.mdp import Mdp, Transition


def bfs_steps(free, start, goal=None, blocked=()):
    """Plain BFS over a set of free cells; returns a distance dict (or one distance)."""
    dist = {start: 0}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for dx, dy in ((0, -1), (0, 1), (1, 0), (-1, 0)):
            n = (x + dx, y + dy)
            if n in free and n not in blocked and n not in dist:
                dist[n] = dist[(x, y)] + 1
                queue.append(n)
    return dist if goal is None else dist[goal]


def cell_of(name):
    """``x3y7`` -> ``(3, 7)``."""
    x, y = name[1:].split("y")
    return int(x), int(y)


def tiny_mdp(probs=(1.0,), reward=-1.0, gamma=1.0):
    """Two states: 0 moves to the absorbing 1 with the given successor probabilities."""
    trans = {(1, 0): (Transition(1, 1.0, 0.0),)}
    outs = tuple(Transition(1 if i == 0 else 0, p, reward) for i, p in enumerate(probs))
    trans[(0, 0)] = outs
    return Mdp(("s0", "s1"), ("go",), ((0,), (0,)), trans, gamma, frozenset({1}))


@pytest.fixture(scope="session")
def two_rooms_spec():
    return canonical_two_rooms()


@pytest.fixture(scope="session")
def two_rooms_a(two_rooms_spec):
    return build_two_rooms(two_rooms_spec, "A")


@pytest.fixture(scope="session")
def two_rooms_b(two_rooms_spec):
    return build_two_rooms(two_rooms_spec, "B")


@pytest.fixture(scope="session")
def push_box():
    spec = PushBoxSpec()
    mdp, part = build_push_box(spec)
    return spec, mdp, part


@pytest.fixture(scope="session")
def crafted_push_box():
    spec = crafted_push_box_spec()
    mdp, part = build_push_box(spec)
    return spec, mdp, part
