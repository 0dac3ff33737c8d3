"""Command-line interface ``kb``.

Every command prints one JSON report (fixed key order, no timings) to stdout
and, with ``--output DIR``, also writes it to ``DIR/report.json``. Exit codes:
0 on success / convergence, 2 when a solve hit its iteration cap, 1 on usage,
format or validation errors.
"""

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import jsonschema

from . import __version__
from .cone import spherical_from_kb
from .errors import KBError
from .flows import FUNCTIONALS, flow_evolve
from .io import load_measure, save_measure
from .measures import GridSpec, MatrixMeasure, first_invalid_cell, synth_measure, total_mass, zero_like
from .solver import MODES, SolverConfig, sample_path, solve

log = logging.getLogger(__name__)

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "nt": {"type": "integer", "minimum": 2},
        "max_iter": {"type": "integer", "minimum": 0},
        "tau": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "sigma": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "theta": {"type": "number", "minimum": 0, "maximum": 1},
        "tol_energy": {"type": "number", "exclusiveMinimum": 0},
        "tol_residual": {"type": "number", "exclusiveMinimum": 0},
        "mode": {"enum": list(MODES)},
        "seed": {"type": "integer", "minimum": 0},
        "check_every": {"type": "integer", "minimum": 1},
    },
}

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _solver_flags(p):
    p.add_argument("--nt", type=int)
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--tol", type=float, help="energy and residual tolerance")
    p.add_argument("--tau", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", type=Path, help="JSON file with solver settings")


def _output_flag(p, required=False):
    p.add_argument("--output", type=Path, required=required, help="output directory")


def build_parser():
    parser = _Parser(prog="kb", description="Kantorovich-Bures distances, geodesics and gradient flows.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("distance", help="distance between two measures")
    p.add_argument("--a", required=True, type=Path)
    p.add_argument("--b", required=True, help="measure file or 'zero'")
    p.add_argument("--mode", choices=MODES)
    _solver_flags(p)
    _output_flag(p)

    p = sub.add_parser("spherical", help="spherical distance of the mass-normalized measures")
    p.add_argument("--a", required=True, type=Path)
    p.add_argument("--b", required=True, type=Path)
    _solver_flags(p)
    _output_flag(p)

    p = sub.add_parser("geodesic", help="write frames of an optimal path")
    p.add_argument("--a", required=True, type=Path)
    p.add_argument("--b", required=True, help="measure file or 'zero'")
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--mode", choices=MODES)
    _solver_flags(p)
    _output_flag(p, required=True)

    p = sub.add_parser("flow", help="explicit gradient flow")
    p.add_argument("--a", required=True, type=Path)
    p.add_argument("--functional", required=True, choices=FUNCTIONALS)
    p.add_argument("--dt", required=True, type=float)
    p.add_argument("--steps", required=True, type=int)
    p.add_argument("--record-every", type=int, dest="record_every")
    _output_flag(p)

    p = sub.add_parser("validate", help="check that a file holds a valid PSD measure")
    p.add_argument("--a", required=True, type=Path)

    p = sub.add_parser("synth", help="write a synthetic measure")
    p.add_argument("--generator", required=True, choices=("constant", "bump", "rotating", "random"))
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mass", type=float, help="rescale to this total mass")
    p.add_argument("--width", type=float)
    p.add_argument("--floor", type=float)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--modes", type=int)
    p.add_argument("--center", type=float, nargs="+")
    p.add_argument("--file", required=True, type=Path, help="destination .kbm file")
    return parser


def resolve_config(args, **overrides):
    """Defaults, then the ``--config`` file, then command-line flags."""
    values = {}
    if getattr(args, "config", None) is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        try:
            jsonschema.validate(loaded, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise UsageError(f"invalid config: {exc.message}") from exc
        values.update(loaded)
    for name in ("nt", "max_iter", "tau", "sigma", "seed", "mode"):
        value = getattr(args, name, None)
        if value is not None:
            values[name] = value
    if getattr(args, "tol", None) is not None:
        values["tol_energy"] = values["tol_residual"] = args.tol
    values.update(overrides)
    known = {f.name for f in fields(SolverConfig)}
    return SolverConfig(**{k: v for k, v in values.items() if k in known})


def _load_pair(args):
    A = load_measure(args.a)
    B = zero_like(A) if args.b == "zero" else load_measure(args.b)
    A.check()
    B.check()
    return A, B


def _report_summary(report):
    return {
        "distance": report.distance,
        "energy": report.energy,
        "residual": report.residual,
        "iterations": report.iterations,
        "converged": report.converged,
        "max_mass": report.max_mass,
        "mass_bound": report.mass_bound,
    }


def _emit(doc, output):
    text = json.dumps(doc, indent=2) + "\n"
    sys.stdout.write(text)
    if output is not None:
        output.mkdir(parents=True, exist_ok=True)
        (output / "report.json").write_text(text)


def cmd_distance(args):
    cfg = resolve_config(args)
    A, B = _load_pair(args)
    report, _ = solve(A, B, cfg)
    doc = {"command": "distance", "inputs": {"a": str(args.a), "b": str(args.b)}, "config": cfg.to_dict()}
    doc["result"] = _report_summary(report)
    _emit(doc, args.output)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_spherical(args):
    cfg = resolve_config(args)
    A, B = _load_pair(args)
    for name, G in (("a", A), ("b", B)):
        if total_mass(G) <= 0.0:
            raise UsageError(f"--{name} has zero mass")
    Ahat = MatrixMeasure(A.grid, A.values / total_mass(A))
    Bhat = MatrixMeasure(B.grid, B.values / total_mass(B))
    report, _ = solve(Ahat, Bhat, cfg)
    doc = {"command": "spherical", "inputs": {"a": str(args.a), "b": str(args.b)}, "config": cfg.to_dict()}
    doc["result"] = {"spherical_distance": spherical_from_kb(report.distance), **_report_summary(report)}
    _emit(doc, args.output)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_geodesic(args):
    if args.frames < 2:
        raise UsageError("--frames must be at least 2")
    cfg = resolve_config(args)
    A, B = _load_pair(args)
    report, path = solve(A, B, cfg)
    args.output.mkdir(parents=True, exist_ok=True)
    frames = []
    width = len(str(args.frames - 1))
    for i in range(args.frames):
        t = i / (args.frames - 1)
        name = f"frame_{i:0{width}d}.kbm"
        G = sample_path(path, t)
        save_measure(G, args.output / name)
        frames.append({"index": i, "t": t, "file": name, "mass": total_mass(G)})
    (args.output / "index.json").write_text(json.dumps({"frames": frames}, indent=2) + "\n")
    doc = {
        "command": "geodesic",
        "inputs": {"a": str(args.a), "b": str(args.b), "frames": args.frames},
        "config": cfg.to_dict(),
        "result": _report_summary(report),
        "frames": frames,
    }
    _emit(doc, args.output)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_flow(args):
    G = load_measure(args.a)
    every = args.record_every or max(args.steps, 1)
    result = flow_evolve(G.check(), args.functional, args.dt, args.steps, record_every=every)
    frames = []
    if args.output is not None:
        args.output.mkdir(parents=True, exist_ok=True)
        for i, (t, slice_) in enumerate(zip(result.times, result.trajectory)):
            name = f"flow_{i:04d}.kbm"
            save_measure(slice_, args.output / name)
            frames.append({"index": i, "t": t, "file": name})
    doc = {
        "command": "flow",
        "inputs": {"a": str(args.a)},
        "config": {"functional": args.functional, "dt": args.dt, "steps": args.steps, "record_every": every},
        "result": {
            "final_time": args.steps * args.dt,
            "initial_value": result.values[0],
            "final_value": result.values[-1],
            "clamped_steps": result.clamped,
            "values": result.values,
        },
        "frames": frames,
    }
    _emit(doc, args.output)
    return EXIT_OK


def cmd_validate(args):
    G = load_measure(args.a)
    bad = first_invalid_cell(G)
    doc = {"command": "validate", "inputs": {"a": str(args.a)}, "valid": bad is None}
    if bad is not None:
        doc["cell"], doc["reason"] = list(bad[0]), bad[1]
        print(f"kb: cell {bad[0]} is {bad[1]}", file=sys.stderr)
    _emit(doc, None)
    return EXIT_OK if bad is None else EXIT_ERROR


def cmd_synth(args):
    grid = GridSpec(args.d, args.n)
    params = {k: getattr(args, k) for k in ("width", "floor", "amplitude", "modes", "center") if getattr(args, k) is not None}
    G = synth_measure(grid, args.generator, seed=args.seed, **params)
    if args.mass is not None:
        m = total_mass(G)
        if m <= 0:
            raise UsageError("cannot rescale a zero measure")
        G = MatrixMeasure(grid, G.values * (args.mass / m))
    args.file.parent.mkdir(parents=True, exist_ok=True)
    save_measure(G, args.file)
    doc = {
        "command": "synth",
        "config": {"generator": args.generator, "d": args.d, "n": args.n, "seed": args.seed, **params, "mass": args.mass},
        "file": str(args.file),
        "mass": total_mass(G),
    }
    _emit(doc, None)
    return EXIT_OK


COMMANDS = {
    "distance": cmd_distance,
    "spherical": cmd_spherical,
    "geodesic": cmd_geodesic,
    "flow": cmd_flow,
    "validate": cmd_validate,
    "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"kb: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, KBError, OSError) as exc:
        print(f"kb: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
