"""File formats: JSON model specs, environment specs, value/policy tables,
trajectories, composition bundles and heatmaps.

Negative infinity is written as the string ``"-inf"`` in both CSV and JSON;
undefined entries are empty CSV cells or JSON ``null``.
"""
from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Mapping
from dataclasses import fields
from pathlib import Path
from typing import Any

import numpy as np

from .bt import Trajectory
from .composition import AssumptionReport, CompositionResult
from .envs import (
    GridSpec,
    PushBoxSpec,
    build_corridor,
    build_push_box,
    build_region_maze,
    build_two_rooms,
    parse_ascii_map,
    render_ascii_map,
    state_name,
)
from .mdp import Mdp, Policy, RegionPartition, Transition, check_valid

MDP_FIELDS = ("states", "actions", "transitions", "gamma", "terminal", "regions")
TRANSITION_FIELDS = ("s", "a", "s'", "p", "r")


# --- scalars ----------------------------------------------------------------

def encode_value(x: float) -> float | str | None:
    x = float(x)
    if math.isnan(x):
        return None
    if x == -math.inf:
        return "-inf"
    if x == math.inf:
        return "inf"
    return x


def decode_value(x: Any) -> float:
    if x is None or x == "":
        return math.nan
    if isinstance(x, str):
        x = x.strip()
        if x in ("-inf", "inf"):
            return float(x)
        return float(x)
    return float(x)


def _format(x: float) -> str:
    enc = encode_value(x)
    return "" if enc is None else enc if isinstance(enc, str) else repr(enc)


def write_json(path: str | Path, data: Any) -> None:
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text())


# --- model specs --------------------------------------------------------------

def mdp_to_json(mdp: Mdp, partition: RegionPartition | None = None) -> dict[str, Any]:
    names, acts = mdp.state_names, mdp.action_names
    trans = []
    for s in range(mdp.num_states):
        for a in mdp.available[s]:
            for t in mdp.transitions[(s, a)]:
                if t.forbidden:
                    raise ValueError("forbidden transitions have no file representation")
                trans.append({"s": names[s], "a": acts[a], "s'": names[t.next_state],
                              "p": t.prob, "r": t.reward})
    out: dict[str, Any] = {
        "states": list(names),
        "actions": list(acts),
        "transitions": trans,
        "gamma": mdp.discount,
        "terminal": [names[s] for s in sorted(mdp.terminal)],
    }
    if partition is not None:
        order = partition.order or tuple(sorted(partition.regions))
        out["regions"] = {lab: [names[s] for s in sorted(partition[lab])] for lab in order}
    return out


def _lookup(table: Mapping[str, int], name: Any, what: str) -> int:
    if not isinstance(name, str) or name not in table:
        raise ValueError(f"unknown {what} {name!r}")
    return table[name]


def mdp_from_json(data: Mapping[str, Any]) -> tuple[Mdp, RegionPartition | None]:
    """Parse and validate a JSON model spec.

    Terminal states without listed transitions get a zero-reward self-loop on
    the first action. Raises ``ValueError`` (or ``InvalidMdpError``) on any
    malformed or invalid input.
    """
    if not isinstance(data, Mapping):
        raise ValueError("model spec must be a JSON object")
    unknown = set(data) - set(MDP_FIELDS)
    if unknown:
        raise ValueError(f"unknown model spec fields {sorted(unknown)}")
    for key in ("states", "actions", "transitions", "gamma"):
        if key not in data:
            raise ValueError(f"model spec lacks {key!r}")
    states, actions = list(data["states"]), list(data["actions"])
    if len(set(states)) != len(states) or len(set(actions)) != len(actions):
        raise ValueError("state and action names must be unique")
    s_idx = {n: i for i, n in enumerate(states)}
    a_idx = {n: i for i, n in enumerate(actions)}
    terminal = frozenset(_lookup(s_idx, n, "terminal state") for n in data.get("terminal", []))

    rows: dict[tuple[int, int], list[Transition]] = {}
    for k, tr in enumerate(data["transitions"]):
        if not isinstance(tr, Mapping) or set(tr) != set(TRANSITION_FIELDS):
            raise ValueError(f"transition {k} must have exactly the fields {TRANSITION_FIELDS}")
        s = _lookup(s_idx, tr["s"], "state")
        a = _lookup(a_idx, tr["a"], "action")
        s2 = _lookup(s_idx, tr["s'"], "state")
        rows.setdefault((s, a), []).append(
            Transition(s2, decode_value(tr["p"]), decode_value(tr["r"])))
    for s in terminal:
        if not any(key[0] == s for key in rows):
            rows[(s, 0)] = [Transition(s, 1.0, 0.0)]
    available = tuple(tuple(sorted(a for (s2, a) in rows if s2 == s))
                      for s in range(len(states)))
    mdp = Mdp(tuple(states), tuple(actions), available,
              {k: tuple(v) for k, v in rows.items()}, float(data["gamma"]), terminal)
    check_valid(mdp)

    part = None
    if "regions" in data:
        regions = data["regions"]
        if not isinstance(regions, Mapping):
            raise ValueError("regions must map labels to state-name lists")
        part = RegionPartition.from_regions(
            len(states),
            {lab: [_lookup(s_idx, n, "state") for n in members]
             for lab, members in regions.items()},
            order=list(regions))
    return mdp, part


# --- environment specs -------------------------------------------------------

def _cells(items) -> frozenset[tuple[int, int]]:
    return frozenset((int(x), int(y)) for x, y in items)


def _checked_fields(data: Mapping[str, Any], allowed: Iterable[str], env: str) -> None:
    extra = set(data) - set(allowed) - {"env"}
    if extra:
        raise ValueError(f"unknown fields for env {env!r}: {sorted(extra)}")


def push_box_spec_from_json(data: Mapping[str, Any]) -> PushBoxSpec:
    names = [f.name for f in fields(PushBoxSpec)]
    _checked_fields(data, names, "push_box")
    kw = {k: data[k] for k in names if k in data}
    for key in ("goal_cells", "obstacles"):
        if key in kw and kw[key] is not None:
            kw[key] = _cells(kw[key])
    return PushBoxSpec(**kw)


def push_box_spec_to_json(spec: PushBoxSpec) -> dict[str, Any]:
    out: dict[str, Any] = {"env": "push_box"}
    for f in fields(PushBoxSpec):
        val = getattr(spec, f.name)
        if isinstance(val, frozenset):
            val = sorted([list(c) for c in val])
        out[f.name] = val
    return out


def grid_spec_from_json(data: Mapping[str, Any]) -> GridSpec:
    if "map" in data:
        return parse_ascii_map(data["map"], data.get("step_reward", -1.0), data.get("slip", 0.0))
    terminals = {(int(c[0]), int(c[1])): lab for c, lab in
                 ((t["cell"], t["label"]) for t in data.get("terminals", []))}
    return GridSpec(int(data["width"]), int(data["height"]), _cells(data.get("walls", [])),
                    _cells(data.get("doors", [])), terminals,
                    float(data.get("step_reward", -1.0)), float(data.get("slip", 0.0)))


def grid_spec_to_json(spec: GridSpec, **extra: Any) -> dict[str, Any]:
    return {"map": render_ascii_map(spec), "step_reward": spec.step_reward,
            "slip": spec.slip, **extra}


_GRID_FIELDS = ("map", "width", "height", "walls", "doors", "terminals", "step_reward", "slip")


class LoadedModel:
    """A model read from disk together with whatever the file told us about it."""

    def __init__(self, mdp: Mdp, partition: RegionPartition | None, kind: str,
                 grid: GridSpec | None = None, push_box: PushBoxSpec | None = None,
                 target: str | None = None):
        self.mdp = mdp
        self.partition = partition
        self.kind = kind
        self.grid = grid
        self.push_box = push_box
        self.target = target


def load_model(path: str | Path) -> LoadedModel:
    """Load a JSON model spec, a JSON environment spec (``"env"`` key) or an
    ASCII two-rooms map (any non-JSON file)."""
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        if path.suffix == ".json":
            raise ValueError(f"{path} is not valid JSON") from None
        grid = parse_ascii_map(text)
        mdp, part = build_two_rooms(grid, "A")
        return LoadedModel(mdp, part, "two_rooms", grid=grid, target="A")
    if not isinstance(data, Mapping) or "env" not in data:
        mdp, part = mdp_from_json(data)
        return LoadedModel(mdp, part, "mdp")
    env = data["env"]
    if env == "two_rooms":
        _checked_fields(data, _GRID_FIELDS + ("target",), env)
        grid = grid_spec_from_json(data)
        target = data.get("target", "A")
        mdp, part = build_two_rooms(grid, target)
        return LoadedModel(mdp, part, env, grid=grid, target=target)
    if env == "region_maze":
        _checked_fields(data, ("map",), env)
        mdp, part, grid = build_region_maze(data["map"])
        return LoadedModel(mdp, part, env, grid=grid)
    if env == "corridor":
        _checked_fields(data, ("length",), env)
        return LoadedModel(build_corridor(int(data.get("length", 3))), None, env)
    if env == "push_box":
        spec = push_box_spec_from_json(data)
        mdp, part = build_push_box(spec)
        return LoadedModel(mdp, part, env, push_box=spec)
    raise ValueError(f"unknown env {env!r}")


# --- value functions and policies ---------------------------------------------

def write_values_csv(path: str | Path, mdp: Mdp, values, states: Iterable[int] | None = None):
    idx = range(mdp.num_states) if states is None else sorted(states)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "value"])
        for s in idx:
            w.writerow([mdp.state_names[s], _format(values[s])])


def read_values_csv(path: str | Path) -> dict[str, float]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["state", "value"]:
        raise ValueError(f"{path}: expected a 'state,value' header")
    out = {}
    for row in rows[1:]:
        if len(row) != 2:
            raise ValueError(f"{path}: malformed row {row}")
        out[row[0]] = decode_value(row[1])
    return out


def values_to_json(mdp: Mdp, values) -> dict[str, Any]:
    return {mdp.state_names[s]: encode_value(values[s]) for s in range(mdp.num_states)}


def values_from_json(mdp: Mdp, data: Mapping[str, Any]) -> np.ndarray:
    v = np.full(mdp.num_states, np.nan)
    for name, x in data.items():
        v[mdp.state_index(name)] = decode_value(x)
    return v


def write_policy_csv(path: str | Path, mdp: Mdp, policy: Policy,
                     states: Iterable[int] | None = None):
    idx = range(mdp.num_states) if states is None else sorted(states)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "action"])
        for s in idx:
            w.writerow([mdp.state_names[s], mdp.action_names[policy[s]] if s in policy else ""])


def read_policy_csv(path: str | Path, mdp: Mdp) -> Policy:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["state", "action"]:
        raise ValueError(f"{path}: expected a 'state,action' header")
    acts = np.full(mdp.num_states, -1, dtype=np.int64)
    for name, act in rows[1:]:
        if act:
            acts[mdp.state_index(name)] = mdp.action_index(act)
    return Policy(acts)


def policy_to_json(mdp: Mdp, policy: Policy) -> dict[str, str | None]:
    return {mdp.state_names[s]: (mdp.action_names[policy[s]] if s in policy else None)
            for s in range(mdp.num_states)}


def write_trajectory_csv(path: str | Path, mdp: Mdp, traj: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "state", "action", "reward", "region"])
        for t, st in enumerate(traj.steps):
            w.writerow([t, mdp.state_names[st.state], mdp.action_names[st.action],
                        _format(st.reward), st.region])


def assumption_to_json(mdp: Mdp, rep: AssumptionReport) -> dict[str, Any]:
    def name(s):
        return None if s is None else mdp.state_names[s]

    return {
        "ok": rep.ok,
        "neighbors_ok": rep.neighbors_ok,
        "finite_reward_ok": rep.finite_reward_ok,
        "no_return_ok": rep.no_return_ok,
        "direct_transition_ok": rep.direct_transition_ok,
        "witnesses": [
            {"rule": w.rule, "state": name(w.state),
             "action": None if w.action is None else mdp.action_names[w.action],
             "successor": name(w.successor)}
            for w in rep.witnesses
        ],
    }


def write_bundle(out: str | Path, mdp: Mdp, result: CompositionResult,
                 extra: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Write a composition result as a directory of CSV and JSON files.

    Returns the manifest that is also stored as ``bundle.json``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}
    part = result.composed.partition
    write_values_csv(out / "values.csv", mdp, result.v_composed)
    write_policy_csv(out / "policy.csv", mdp, result.composed.flatten())
    files["values"], files["policy"] = "values.csv", "policy.csv"
    for lab, vals in result.region_values.items():
        key = lab.replace(":", "_")
        states = part.regions.get(lab)
        if states is None and lab.startswith("beta:"):
            states = part.regions.get("beta")
        write_values_csv(out / f"values_{key}.csv", mdp, vals, states)
        files[f"values_{key}"] = f"values_{key}.csv"
    for lab, pol in result.composed.policies.items():
        key = lab.replace(":", "_")
        write_policy_csv(out / f"policy_{key}.csv", mdp, pol, pol.domain)
        files[f"policy_{key}"] = f"policy_{key}.csv"
    for lab, bnd in result.boundaries.items():
        key = lab.replace(":", "_")
        write_json(out / f"boundary_{key}.json", bnd.to_json(mdp))
        files[f"boundary_{key}"] = f"boundary_{key}.json"
    if result.assumption is not None:
        write_json(out / "assumption.json", assumption_to_json(mdp, result.assumption))
        files["assumption"] = "assumption.json"
    manifest = {
        "regions": {lab: len(part[lab]) for lab in (part.order or sorted(part.regions))},
        "files": files,
        **(extra or {}),
    }
    write_json(out / "bundle.json", manifest)
    return manifest


# --- heatmaps -------------------------------------------------------------------

PGM_WALL = 0
PGM_NEG_INF = 1
PGM_LOW, PGM_HIGH = 2, 255


def grid_values(spec: GridSpec, values: Mapping[str, float]) -> np.ndarray:
    """Lay per-cell values onto a ``height x width`` array.

    Walls and undefined values are NaN. Every free cell needs an entry (possibly
    empty) and every entry needs a free cell.
    """
    arr = np.full((spec.height, spec.width), np.nan)
    names = {state_name(c): c for c in spec.cells}
    unknown = sorted(set(values) - set(names))
    if unknown:
        raise ValueError(f"values given for cells not on the map: {unknown[:5]}")
    missing = sorted(set(names) - set(values))
    if missing:
        raise ValueError(f"map cells without a value: {missing[:5]}")
    for name, (x, y) in names.items():
        arr[y, x] = values[name]
    return arr


def heatmap_levels(arr: np.ndarray) -> np.ndarray:
    """Grey levels: walls 0, negative infinity 1, finite values spread over 2..255."""
    out = np.full(arr.shape, PGM_WALL, dtype=np.int64)
    finite = np.isfinite(arr)
    out[np.isneginf(arr)] = PGM_NEG_INF
    if finite.any():
        lo, hi = arr[finite].min(), arr[finite].max()
        scale = (arr[finite] - lo) / (hi - lo) if hi > lo else np.ones(finite.sum())
        out[finite] = PGM_LOW + np.rint(scale * (PGM_HIGH - PGM_LOW)).astype(np.int64)
    return out


def write_pgm(path: str | Path, arr: np.ndarray) -> None:
    levels = heatmap_levels(arr)
    h, w = levels.shape
    lines = ["P2", f"{w} {h}", str(PGM_HIGH)]
    lines += [" ".join(str(int(x)) for x in row) for row in levels]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path: str | Path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines()
              if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError("only plain PGM (P2) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    return np.array([int(t) for t in tokens[4:4 + w * h]]).reshape(h, w)


def ascii_grid(arr: np.ndarray, width: int = 7, digits: int = 2) -> str:
    rows = []
    for row in arr:
        cells = []
        for x in row:
            if math.isnan(x):
                cells.append("#" * width)
            elif x == -math.inf:
                cells.append("-inf".rjust(width))
            else:
                cells.append(f"{x:{width}.{digits}f}")
        rows.append(" ".join(cells))
    return "\n".join(rows) + "\n"
