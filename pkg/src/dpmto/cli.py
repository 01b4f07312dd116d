"""Command-line entry point: ``dpmto solve`` and ``dpmto verify``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .driver import RunConfig, reference_accuracy, run
from .errors import ConfigurationError, DpmtoError, InfeasibleError, NumericalFailure
from .io import export, grid_from_raster, read_pgm

EXIT_CODES = {ConfigurationError: 2, NumericalFailure: 3, InfeasibleError: 4}


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config)
    if getattr(args, "mode", None):
        cfg = dataclasses.replace(cfg, mode=args.mode)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "scale", None) is not None:
        cfg = cfg.scaled(args.scale)
    return cfg


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    if args.no_reference:
        cfg = dataclasses.replace(cfg, compute_reference=False)
    report = run(cfg)
    baseline = None
    if args.with_baseline and cfg.mode == "adaptive":
        baseline = run(dataclasses.replace(cfg, mode="uniform_baseline", compute_reference=False))
    if args.out:
        export(report, args.out, baseline, timing=args.timing)
    line = {"J": report.J, "J_over_J_ref": report.accuracy, "free_dofs": report.final.free_dofs,
            "n_design": report.final.n_design, "wall_clock": report.wall_clock}
    if baseline is not None:
        line["J_over_J_baseline"] = report.J / baseline.J
        line["speed_up"] = baseline.wall_clock / report.wall_clock
    print(json.dumps(line))
    return 0


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    problem = cfg.problem_spec()
    raster = read_pgm(args.design)
    grid = grid_from_raster(raster, cfg.nx, cfg.ny, problem.width / cfg.nx)
    J_ref, res = reference_accuracy(grid, problem, cfg)
    line = {"J_ref": J_ref, "reference_resolution": list(res)}
    if args.J is not None:
        line["J_over_J_ref"] = args.J / J_ref
    print(json.dumps(line))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpmto", description="dp-adaptive multiresolution topology optimization")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run the optimization")
    s.add_argument("--config", required=True)
    s.add_argument("--mode", choices=["adaptive", "baseline", "uniform_baseline"])
    s.add_argument("--scale", type=float)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--with-baseline", action="store_true", help="also run the uniform baseline for J/J0 and speed-up")
    s.add_argument("--no-reference", action="store_true", help="skip the fine-mesh reference solve")
    s.add_argument("--timing", action="store_true", help="write wall-clock times to timing.json")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="evaluate a design raster on the fine reference mesh")
    v.add_argument("--design", required=True)
    v.add_argument("--config", required=True)
    v.add_argument("--scale", type=float)
    v.add_argument("--J", type=float, help="objective on the design mesh, to report J/J*")
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (DpmtoError, OSError) as exc:
        code = next((c for t, c in EXIT_CODES.items() if isinstance(exc, t)), 1)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
