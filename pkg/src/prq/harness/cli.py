"""Command line entry point.

    prq diagnose <spec>
    prq solve <spec>
    prq run <spec> [--seed-override 1,2,3] [--output-dir DIR]
    prq sweep <spec> --grid key=v1,v2 [--grid ...] [--mode run|solve]
    prq report <dir> [--no-plots]

``<spec>`` is a JSON file or a builtin name.  Exit status: 0 success,
2 validation error, 3 numeric or divergence error.  ``PRQ_WORKERS`` sets
the number of worker processes for seeds.
"""

from __future__ import annotations

import argparse
import json
import sys

from ..errors import NumericError, ValidationError
from .runner import _jsonable, build_context, diagnose, run_experiment, sweep
from .spec import BUILTINS, load_spec, parse_grid

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3


def _print(obj):
    print(json.dumps(_jsonable(obj), indent=2, sort_keys=True))


def _seeds(text):
    try:
        seeds = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"--seed-override expects comma-separated integers, got {text!r}") from None
    if not seeds:
        raise ValidationError("--seed-override is empty")
    return seeds


def _load(args):
    spec = load_spec(args.spec)
    if getattr(args, "seed_override", None):
        spec = spec.with_overrides(seeds=_seeds(args.seed_override))
    return spec


def cmd_diagnose(args):
    _print(diagnose(_load(args)))


def cmd_solve(args):
    ctx = build_context(_load(args))
    if ctx.certificate is None:
        raise ValidationError("problem exceeds the enumeration cap")
    _print(ctx.certificate.as_dict())


def cmd_run(args):
    res = run_experiment(_load(args), args.output_dir)
    _print({"output_dir": str(res.output_dir), "aggregate": res.summary["aggregate"]})


def cmd_sweep(args):
    spec = _load(args)
    summary = sweep(spec, parse_grid(args.grid), args.output_dir, args.mode)
    _print(summary)


def cmd_report(args):
    from .report import emit_report

    rep = emit_report(args.dir, plots=not args.no_plots)
    _print({"files": rep["files"]})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prq", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    builtins = ", ".join(sorted(BUILTINS))

    def spec_cmd(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("spec", help=f"JSON spec file or builtin ({builtins})")
        sp.add_argument("--seed-override", help="comma-separated seeds replacing the spec's list")
        sp.set_defaults(func=func)
        return sp

    spec_cmd("diagnose", cmd_diagnose, "norms, constants and contraction report")
    spec_cmd("solve", cmd_solve, "fixed-point census by policy enumeration")
    sp = spec_cmd("run", cmd_run, "run the experiment and persist trajectories")
    sp.add_argument("--output-dir")
    sp = spec_cmd("sweep", cmd_sweep, "cartesian sweep over spec keys")
    sp.add_argument("--grid", action="append", required=True, metavar="KEY=V1,V2,...")
    sp.add_argument("--mode", choices=("run", "solve"), default="run")
    sp.add_argument("--output-dir")
    rp = sub.add_parser("report", help="summary and SVG plots for a run directory")
    rp.add_argument("dir")
    rp.add_argument("--no-plots", action="store_true")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "build_parser"]
