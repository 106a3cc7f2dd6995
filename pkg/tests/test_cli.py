import json
import subprocess
import sys

import pytest

from vfcompose import cli, io
from vfcompose.envs import canonical_two_rooms, crafted_push_box_spec, door_cells, state_name
from vfcompose.experiments import ExperimentOutcome


@pytest.fixture
def specs(tmp_path):
    paths = {}
    paths["corridor"] = tmp_path / "corridor.json"
    paths["corridor"].write_text(json.dumps({"env": "corridor", "length": 3}))
    paths["rooms"] = tmp_path / "rooms.json"
    paths["rooms"].write_text(json.dumps({"env": "two_rooms",
                                          **io.grid_spec_to_json(canonical_two_rooms())}))
    paths["map"] = tmp_path / "rooms.txt"
    paths["map"].write_text(io.render_ascii_map(canonical_two_rooms()))
    paths["push"] = tmp_path / "push.json"
    paths["push"].write_text(json.dumps(io.push_box_spec_to_json(crafted_push_box_spec())))
    return paths


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_solve_corridor(tmp_path, specs, capsys):
    assert run("solve", specs["corridor"], "--out", tmp_path / "o") == 0
    assert (tmp_path / "o" / "values.csv").read_text() == \
        "state,value\nc0,-2.0\nc1,-1.0\nc2,0.0\n"
    assert "residual" in capsys.readouterr().out


def test_solve_two_rooms_door_values(tmp_path, specs):
    assert run("solve", specs["map"], "--out", tmp_path / "o") == 0
    vals = io.read_values_csv(tmp_path / "o" / "values.csv")
    upper, lower = door_cells(canonical_two_rooms())
    assert vals[state_name(upper)] == -2 and vals[state_name(lower)] == -11


def test_solve_push_box_residual(tmp_path, specs, capsys):
    assert run("solve", specs["push"], "--out", tmp_path / "o") == 0
    out = capsys.readouterr().out
    assert float(out.split("residual")[1]) <= 1e-9
    assert (tmp_path / "o" / "policy.json").exists()


def test_solve_gamma_flag(tmp_path, specs):
    assert run("solve", specs["corridor"], "--gamma", "0.5", "--out", tmp_path / "o") == 0
    vals = io.read_values_csv(tmp_path / "o" / "values.csv")
    assert vals["c0"] == pytest.approx(-1.5)


def test_compose_vf_oracle(tmp_path, specs, capsys):
    assert run("compose", specs["rooms"], "--mode", "vf", "--oracle", "--out", tmp_path / "b") == 0
    bundle = json.loads((tmp_path / "b" / "bundle.json").read_text())
    assert bundle["oracle"]["sup_gap"] <= 1e-8
    assert "gap to monolithic" in capsys.readouterr().out


def test_compose_local_oracle_points_to_lower_half(tmp_path, specs):
    assert run("compose", specs["rooms"], "--mode", "local", "--oracle",
               "--out", tmp_path / "b") == 0
    oracle = json.loads((tmp_path / "b" / "bundle.json").read_text())["oracle"]
    assert oracle["sup_gap"] > 0
    x, y = map(int, oracle["worst_state"][1:].split("y"))
    assert x <= 5 and y >= 6  # room 1 occupies x <= 5, its lower half y >= 6


def test_compose_mixture_writes_boundary(tmp_path, specs):
    assert run("compose", specs["rooms"], "--mode", "mixture", "--weights", "0.3,0.7",
               "--out", tmp_path / "m") == 0
    bundle = json.loads((tmp_path / "m" / "bundle.json").read_text())
    assert bundle["weights"] == [0.3, 0.7]
    assert (tmp_path / "m" / bundle["files"]["boundary_alpha"]).exists()


def test_compose_manual_and_bt(tmp_path, specs):
    tree = tmp_path / "tree.json"
    tree.write_text(json.dumps({"kind": "fallback", "children": [
        {"kind": "sequence", "children": [
            {"kind": "condition", "predicate": "close_to_box"},
            {"kind": "action", "action": "push"}]},
        {"kind": "action", "action": "move_to"}]}))
    assert run("compose", specs["push"], "--mode", "manual", "--oracle",
               "--out", tmp_path / "m") == 0
    # the tree lists push first; the env's move_to-then-push order still applies
    assert run("compose", specs["push"], "--mode", "manual", "--bt", tree,
               "--out", tmp_path / "t") == 0
    for name in ("values.csv", "policy.csv"):
        assert (tmp_path / "m" / name).read_bytes() == (tmp_path / "t" / name).read_bytes()


def test_recursive_compose_on_maze(tmp_path):
    from vfcompose.envs import TREE_7
    spec = tmp_path / "maze.json"
    spec.write_text(json.dumps({"env": "region_maze", "map": TREE_7}))
    assert run("compose", spec, "--mode", "vf", "--oracle", "--out", tmp_path / "r") == 0
    bundle = json.loads((tmp_path / "r" / "bundle.json").read_text())
    assert bundle["oracle"]["sup_gap"] <= 1e-8 and len(bundle["order"]) == 7


def test_render(tmp_path, specs):
    run("solve", specs["map"], "--out", tmp_path / "o")
    assert run("render", tmp_path / "o" / "values.csv", specs["map"],
               "--out", tmp_path / "h") == 0
    pgm = io.read_pgm(tmp_path / "h" / "values.pgm")
    assert pgm.shape == (12, 12)
    assert "#######" in (tmp_path / "h" / "values.txt").read_text()
    small = tmp_path / "small.txt"
    small.write_text("..\n")
    assert run("render", tmp_path / "o" / "values.csv", small, "--out", tmp_path / "x") == 2


def test_exit_code_invalid(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"states": ["a"], "actions": ["x"], "transitions": [
        {"s": "a", "a": "x", "s'": "a", "p": 0.5, "r": 0}], "gamma": 1.0}))
    assert run("solve", bad, "--out", tmp_path / "o") == 2
    assert "probability-sum" in capsys.readouterr().err
    assert run("solve", tmp_path / "missing.json", "--out", tmp_path / "o") == 2


def test_exit_code_divergence(tmp_path):
    loop = tmp_path / "loop.json"
    loop.write_text(json.dumps({"states": ["a", "t"], "actions": ["x"], "transitions": [
        {"s": "a", "a": "x", "s'": "a", "p": 1.0, "r": -1}], "gamma": 1.0, "terminal": ["t"]}))
    assert run("solve", loop, "--out", tmp_path / "o") == 3
    assert run("solve", tmp_path / "x.json", "--out", tmp_path / "o") == 2


def test_exit_code_assumption(tmp_path, capsys):
    spec = tmp_path / "c.json"
    spec.write_text(json.dumps({
        "states": ["c0", "c1", "c2"], "actions": ["W", "E"],
        "transitions": [
            {"s": "c0", "a": "W", "s'": "c0", "p": 1.0, "r": -1.0},
            {"s": "c0", "a": "E", "s'": "c1", "p": 1.0, "r": -1.0},
            {"s": "c1", "a": "W", "s'": "c0", "p": 1.0, "r": -1.0},
            {"s": "c1", "a": "E", "s'": "c2", "p": 1.0, "r": -1.0}],
        "gamma": 1.0, "terminal": ["c2"],
        "regions": {"right": ["c1", "c2"], "left": ["c0"]}}))
    # "right" comes first, so the optimal walk from c0 leaves the later region
    assert run("compose", spec, "--mode", "vf", "--out", tmp_path / "ok") == 4
    assert "leaves-beta" in capsys.readouterr().err


def test_exit_code_experiment_failure(tmp_path, monkeypatch):
    monkeypatch.setitem(cli.PRESETS, "vf-gap",
                        lambda out, **kw: ExperimentOutcome({}, ["forced"]))
    assert run("experiment", "vf-gap", "--out", tmp_path / "e") == 5

    def boom(out, **kw):
        raise ValueError("broken step")

    monkeypatch.setitem(cli.PRESETS, "vf-gap", boom)
    assert run("experiment", "vf-gap", "--out", tmp_path / "e") == 5


@pytest.mark.parametrize("preset", ["two-rooms-fig1", "pushbox-pi-roster", "vf-gap"])
def test_presets_are_byte_identical(tmp_path, preset):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        assert run("experiment", preset, "--seed", 3, "--rollouts", 200, "--out", d) == 0
    files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
    assert files and "report.json" in {str(f) for f in files}
    for f in files:
        assert (dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes()


def test_compose_is_byte_identical(tmp_path, specs):
    for d in ("a", "b"):
        assert run("compose", specs["rooms"], "--mode", "mixture", "--out", tmp_path / d) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_module_entry_point(tmp_path, specs):
    proc = subprocess.run([sys.executable, "-m", "vfcompose", "solve", str(specs["corridor"]),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
