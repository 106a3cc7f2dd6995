"""Command-line entry point: ``vfcompose {solve,compose,experiment,render}``.

Exit codes: 0 success, 2 invalid input, 3 solver divergence, 4 composition
assumption violated, 5 experiment check or step failed.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .bt import bt_from_json, operating_regions
from .composition import (
    AssumptionError,
    compose_local,
    compose_manual_learned,
    compose_mixture,
    decoupled_solve,
    evaluate_switching_policy,
    optimal_policy,
    recursive_compose,
)
from .envs import build_two_rooms, grid_predicates, manual_push_policy, push_box_predicates
from .experiments import DEFAULT_ROLLOUTS, PRESETS
from .mdp import InvalidMdpError, RegionPartition
from .solvers import DivergenceError, SolveConfig, Sweep, greedy_policy, value_iteration

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_ASSUMPTION, EXIT_EXPERIMENT = 0, 2, 3, 4, 5

log = logging.getLogger("vfcompose")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _config(args) -> SolveConfig:
    return SolveConfig(tolerance=args.tol, max_iterations=args.max_iter,
                       sweep=Sweep(args.sweep))


def _load(args) -> io.LoadedModel:
    model = io.load_model(args.spec)
    if args.gamma is not None:
        model.mdp = dataclasses.replace(model.mdp, discount=args.gamma)
    return model


def _weights(text: str | None) -> list[float]:
    if not text:
        return [0.3, 0.7]
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise CliError(f"--weights must be comma-separated numbers, got {text!r}") from None


def cmd_solve(args) -> int:
    model = _load(args)
    mdp = model.mdp
    res = value_iteration(mdp, _config(args))
    pi = greedy_policy(mdp, res.values)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_values_csv(out / "values.csv", mdp, res.values)
    io.write_policy_csv(out / "policy.csv", mdp, pi)
    io.write_json(out / "values.json", io.values_to_json(mdp, res.values))
    io.write_json(out / "policy.json", io.policy_to_json(mdp, pi))
    print(f"iterations {res.iterations} residual {res.residual:.3e}")
    return EXIT_OK


def _partition(args, model: io.LoadedModel) -> RegionPartition:
    if args.bt:
        if model.kind == "push_box":
            preds = push_box_predicates(model.push_box)
        elif model.partition is not None:
            preds = grid_predicates(model.grid, model.partition) if model.grid else {
                f"in_{lab}": (lambda st: lambda s: s in st)(states)
                for lab, states in model.partition.regions.items()}
        else:
            raise CliError("--bt needs a model with named regions to build predicates from")
        tree = bt_from_json(io.read_json(args.bt), preds)
        done = "done" if model.kind == "push_box" else None
        regions = operating_regions(tree, model.mdp, done_label=done)
        declared = model.partition
        if declared is not None and declared.order and set(declared.order) == set(regions.order):
            # same leaves as the env declares: keep the env's solve order
            regions = operating_regions(tree, model.mdp, done_label=done, order=declared.order)
        return regions
    if model.partition is None:
        raise CliError("the model defines no regions; add 'regions' or pass --bt")
    return model.partition


def _split(part: RegionPartition) -> tuple[list[str], frozenset[int], frozenset[int]]:
    order = [lab for lab in (part.order or sorted(part.regions)) if part[lab]]
    if len(order) < 2:
        raise CliError("composition needs at least two non-empty regions")
    return order, part[order[0]], part.union(order[1:])


def cmd_compose(args) -> int:
    model = _load(args)
    mdp, cfg = model.mdp, _config(args)
    part = _partition(args, model)
    order, alpha, beta = _split(part)
    extra: dict = {"mode": args.mode, "order": order}

    if args.mode == "vf":
        if len(order) > 2:
            result = recursive_compose(mdp, RegionPartition(part.labels, part.regions,
                                                            tuple(part.order or order)), cfg=cfg)
        else:
            result = decoupled_solve(mdp, alpha, beta, cfg)
    elif args.mode == "local":
        result = compose_local(mdp, alpha, beta, cfg)
    elif args.mode == "manual":
        if model.kind != "push_box":
            raise CliError("--mode manual needs a push_box environment spec")
        result = compose_manual_learned(mdp, alpha, beta, manual_push_policy(model.push_box), cfg)
    else:
        if model.kind != "two_rooms":
            raise CliError("--mode mixture needs a two_rooms environment spec")
        weights = _weights(args.weights)
        if len(weights) != 2:
            raise CliError("--weights needs one weight per target (A,B)")
        comps = [(w, build_two_rooms(model.grid, t)[0]) for w, t in zip(weights, "AB")]
        result = compose_mixture(comps, alpha, beta, cfg)
        extra["weights"] = weights

    if args.oracle:
        if args.mode == "mixture":
            raise CliError("--oracle has no single monolithic reference in mixture mode")
        v_star, _ = optimal_policy(mdp, cfg)
        v_pol = evaluate_switching_policy(mdp, result.composed, cfg)
        finite = np.isfinite(v_star)
        diff = np.where(finite, np.abs(np.where(finite, v_pol, 0) - np.where(finite, v_star, 0)),
                        0.0)
        worst = int(np.argmax(diff))
        gap = float(diff[worst])
        extra["oracle"] = {"sup_gap": gap, "worst_state": mdp.state_names[worst]}
        print(f"sup-norm gap to monolithic {gap:.3e} (worst state {mdp.state_names[worst]})")
    io.write_bundle(args.out, mdp, result, extra)
    print(f"wrote bundle to {args.out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    fn = PRESETS[args.preset]
    try:
        outcome = fn(Path(args.out), seed=args.seed, rollouts=args.rollouts, cfg=_config(args))
    except (DivergenceError, AssumptionError, ValueError, KeyError) as exc:
        raise CliError(f"experiment {args.preset} failed: {exc}", EXIT_EXPERIMENT) from exc
    for msg in outcome.failures:
        print(f"check failed: {msg}", file=sys.stderr)
    print(f"wrote {args.out}/report.json")
    return EXIT_EXPERIMENT if outcome.failures else EXIT_OK


def cmd_render(args) -> int:
    values = io.read_values_csv(args.values)
    grid = io.grid_spec_from_json({"map": Path(args.map).read_text()})
    arr = io.grid_values(grid, values)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.values).stem
    io.write_pgm(out / f"{stem}.pgm", arr)
    (out / f"{stem}.txt").write_text(io.ascii_grid(arr))
    print(f"wrote {out / (stem + '.pgm')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vfcompose", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("--tol", type=float, default=1e-9, help="convergence tolerance")
        sp.add_argument("--max-iter", type=int, default=100_000, dest="max_iter")
        sp.add_argument("--sweep", choices=[s.value for s in Sweep],
                        default=Sweep.GAUSS_SEIDEL.value)

    s = sub.add_parser("solve", help="value iteration on a model or env spec")
    s.add_argument("spec")
    solver_flags(s)
    s.add_argument("--gamma", type=float, default=None, help="override the discount")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("compose", help="compose region controllers into a bundle")
    c.add_argument("spec")
    solver_flags(c)
    c.add_argument("--gamma", type=float, default=None)
    c.add_argument("--mode", choices=["local", "vf", "manual", "mixture"], default="vf")
    c.add_argument("--weights", help="mixture weights for targets A,B (default 0.3,0.7)")
    c.add_argument("--bt", help="behaviour tree JSON whose operating regions to use")
    c.add_argument("--oracle", action="store_true", help="report the gap to a monolithic solve")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compose)

    e = sub.add_parser("experiment", help="run a named experiment preset")
    e.add_argument("preset", choices=sorted(PRESETS))
    solver_flags(e)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--rollouts", type=int, default=DEFAULT_ROLLOUTS)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_experiment)

    r = sub.add_parser("render", help="heatmap of a grid value CSV")
    r.add_argument("values")
    r.add_argument("map")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except AssumptionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidMdpError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
