"""Command line interface ``ieti-dg``."""

import argparse
import json
import sys

from .driver import ExperimentConfig, emit_report, run_experiment, scaling_study
from .krylov import SolverError

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _eps_c(text):
    if text == "auto":
        return None
    v = float(text)
    if v <= 0:
        raise argparse.ArgumentTypeError("eps-c must be positive")
    return v


def _r_range(text):
    """Parse ``1..5`` (inclusive) or a comma separated list."""
    if ".." in text:
        a, b = text.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(v) for v in text.split(",")]


def _common(p):
    p.add_argument("--p", type=int, help="base spline degree")
    p.add_argument("--layout", help="annulus:NxM, square:NxM or json:PATH")
    p.add_argument("--variant", choices=["mfd", "mfd2", "mfd-2", "mlu", "cglu"])
    p.add_argument("--eps", type=float, help="outer relative tolerance")
    p.add_argument("--eps-c", type=_eps_c, dest="eps_c", default=argparse.SUPPRESS,
                   help="primal basis PCG tolerance, 'auto' for eps/100")
    p.add_argument("--delta", type=float, help="penalty parameter override")
    p.add_argument("--mixed-degree", action="store_true", default=None,
                   help="raise the degree on red patches by one")
    p.add_argument("--mixed-refine", action="store_true", default=None,
                   help="refine grey patches once more")
    p.add_argument("--out", help="report file (default: stdout)")
    p.add_argument("--format", choices=["csv", "json", "md"])
    p.add_argument("--config", help="JSON file with the same keys as the flags")
    p.add_argument("--jobs", type=int, help="worker threads for per-patch setup")


def build_parser():
    parser = _Parser(prog="ieti-dg", description="IETI-DP solver for SIPG multi-patch IgA")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="solve one configuration")
    run.add_argument("--r", type=int, help="refinement level")
    _common(run)
    sc = sub.add_parser("scaling", help="condition number sweep over refinement levels")
    sc.add_argument("--r", type=_r_range, help="levels, e.g. 1..5")
    _common(sc)
    for p in (run, sc):
        p.error = parser.error
    return parser


_DEFAULTS = {"p": 2, "layout": "square:2x2", "variant": "mfd", "eps": 1e-8, "eps_c": None,
             "delta": None, "mixed_degree": False, "mixed_refine": False, "out": None,
             "format": "csv", "jobs": 1}


def _settings(args, parser):
    vals = dict(_DEFAULTS)
    vals["r"] = 2 if args.command == "run" else list(range(1, 6))
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config: {exc}")
        unknown = set(cfg) - set(vals)
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        if args.command == "scaling" and isinstance(cfg.get("r"), str):
            cfg["r"] = _r_range(cfg["r"])
        vals.update(cfg)
    for key in vals:
        v = getattr(args, key, None)
        if key == "eps_c" and hasattr(args, "eps_c"):
            vals[key] = args.eps_c
        elif v is not None:
            vals[key] = v
    return vals


def _config(vals, r):
    return ExperimentConfig(p=vals["p"], r=r, layout=vals["layout"], variant=vals["variant"],
                            eps=vals["eps"], eps_c=vals["eps_c"], delta=vals["delta"],
                            mixed_degree=vals["mixed_degree"],
                            mixed_refine=vals["mixed_refine"], jobs=vals["jobs"])


def _write(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    vals = _settings(args, parser)
    try:
        if args.command == "run":
            cfg = _config(vals, int(vals["r"]))
        else:
            cfgs = [_config(vals, r) for r in vals["r"]]
    except (ValueError, TypeError) as exc:
        parser.error(str(exc))
    try:
        if args.command == "run":
            records = [run_experiment(cfg)]
            _write(emit_report(records, vals["format"]), vals["out"])
            return EXIT_OK
        fit, records = scaling_study(cfgs[0].p, vals["r"], cfgs[0].variant, cfgs[0].layout,
                                     cfgs[0].eps, eps_c=cfgs[0].eps_c, delta=cfgs[0].delta,
                                     mixed_degree=cfgs[0].mixed_degree,
                                     mixed_refine=cfgs[0].mixed_refine, jobs=cfgs[0].jobs)
    except SolverError as exc:
        print(f"ieti-dg: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, OSError) as exc:
        parser.error(str(exc))
    if records:
        _write(emit_report(records, vals["format"]), vals["out"])
    print(f"# fit kappa ~ c (1 + c0 log(H/h))^2: c={fit.c:.4g} c0={fit.c0:.4g} "
          f"max_rel_dev={fit.max_rel_dev:.3g} ratio_ok={fit.ratio_ok}", file=sys.stderr)
    if fit.failures:
        for r, msg in fit.failures:
            print(f"ieti-dg: level r={r} failed: {msg}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
