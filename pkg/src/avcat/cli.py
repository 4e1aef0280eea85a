"""Command-line entry point: ``avcat {average,continue,sweep,scan,verify}``.

Exit codes: 0 success/pass, 1 usage error, 2 mathematical failure (no guiding
system, failed check), 3 numerical failure (divergence).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checks
from .continuation import locate_fold, scan_rows, trace_diagram
from .errors import AvcatError, DivergenceError, NoGuidingSystemError
from .melnikov import average
from .surface import sweep_surface
from .systems import CATALOG, load_system


EXIT_OK, EXIT_USAGE, EXIT_MATH, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(AvcatError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _params(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--param expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"--param {k}: {v!r} is not a number") from None
    return out


def _floats(text) -> list[float]:
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _xwin(args, half_width: float = 1.5):
    lo = -half_width if args.x_min is None else float(args.x_min)
    hi = half_width if args.x_max is None else float(args.x_max)
    if not lo < hi:
        raise UsageError("--x-min must be below --x-max")
    return lo, hi


def _spec(args):
    return load_system(args.system, **_params(args.param))


# ------------------------------------------------------------------- commands


def cmd_average(args) -> int:
    spec = _spec(args)
    per_axis = args.grid or None
    grid = None
    if per_axis:
        axis = np.linspace(-1.0, 1.0, per_axis)
        mesh = np.array(list(itertools.product(axis, repeat=spec.n + spec.k))).T
        grid = (mesh[: spec.n], mesh[spec.n:])
    avg = average(spec, grid)
    out = _outdir(args)
    with open(out / "average.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["order"] + [f"z{i + 1}" for i in range(spec.n)] + [f"mu{j + 1}" for j in range(spec.k)]
                   + [f"g{i + 1}" for i in range(spec.n)])
        for order in range(1, avg.ell + 1):
            g = np.asarray(avg.g_samples[order]).reshape(spec.n, -1)
            for p in range(avg.grid_z.shape[1]):
                w.writerow([order] + [_fmt(v) for v in avg.grid_z[:, p]] + [_fmt(v) for v in avg.grid_mu[:, p]]
                           + [_fmt(v) for v in g[:, p]])
    summary = {"system": spec.name, "ell": avg.ell, "sup_norms": avg.sup_norms, "threshold": avg.threshold}
    _write_text(out / "average.json", _dump(summary))
    sys.stdout.write(_dump(summary))
    return EXIT_OK


def cmd_continue(args) -> int:
    spec = _spec(args)
    avg = average(spec)
    eps = float(args.eps)
    mu_window = (args.mu_min, args.mu_max)
    x_window = _xwin(args)
    branches = trace_diagram(spec, avg, eps, mu_window, x_window)
    folds = []
    out = _outdir(args)
    with open(out / "branches.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["branch", "s", "mu", "eps"] + [f"x{i + 1}" for i in range(spec.n)]
                   + ["stability", "test_fold"] + [f"eig{i + 1}_modulus" for i in range(spec.n)])
        for b_id, b in enumerate(branches):
            for p in b.points:
                w.writerow([b_id, _fmt(p.s), _fmt(p.mu), _fmt(p.eps)] + [_fmt(v) for v in p.x]
                           + [p.stability, _fmt(p.test_fold)] + [_fmt(v) for v in np.sort(np.abs(p.eigs))])
            for i in b.fold_intervals():
                fr = locate_fold(spec, avg, b, i, eps, x_interval=x_window if spec.n == 1 else None)
                d = checks._fold_dict(fr)
                d["branch"] = b_id
                folds.append(d)
    summary = {"system": spec.name, "ell": avg.ell, "eps": eps, "branches": len(branches),
               "stop_reasons": [b.reason for b in branches], "folds": folds}
    _write_text(out / "folds.json", _dump(summary))
    sys.stdout.write(_dump(summary))
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = _spec(args)
    avg = average(spec)
    eps_list = _floats(args.eps)
    cloud = sweep_surface(spec, avg, _xwin(args), (args.mu_min, args.mu_max), eps_list,
                          resolution=args.grid or 201)
    out = _outdir(args)
    n = spec.n
    with open(out / "surface.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "mu"] + [f"x{i + 1}" for i in range(n)] + ["provenance"])
        for row, prov in zip(cloud.points, cloud.provenance):
            w.writerow([_fmt(row[-1]), _fmt(row[n])] + [_fmt(v) for v in row[:n]] + [prov])
    summary = {"system": spec.name, "ell": avg.ell, "points": len(cloud.points), "eps": eps_list,
               "notes": cloud.notes}
    _write_text(out / "surface.json", _dump(summary))
    sys.stdout.write(_dump(summary))
    return EXIT_OK


def cmd_scan(args) -> int:
    spec = _spec(args)
    avg = average(spec)
    res = scan_rows(spec, avg, _xwin(args), [float(args.mu)], float(args.eps),
                    grid_size=args.grid or 2001)[0]
    summary = {"system": spec.name, "ell": avg.ell, "mu": float(args.mu), "eps": float(args.eps),
               "count": res.count, "roots": res.roots, "diverged_cells": res.diverged_cells}
    _write_text(_outdir(args) / "scan.json", _dump(summary))
    sys.stdout.write(_dump(summary))
    return EXIT_OK


def cmd_verify(args) -> int:
    check = args.check
    if check not in checks.CHECKS:
        raise UsageError(f"unknown check {check!r}; choose from {', '.join(checks.CHECKS)}")
    out = _outdir(args)
    params = _params(args.param)
    if check == "closeness":
        eps_list = _floats(args.eps) if args.eps is not None else list(checks.CLOSENESS_LADDER)
        result = checks.check_closeness(args.system or "fold", eps_list,
                                        _xwin(args, 1.0), (args.mu_min, args.mu_max),
                                        params=params)
        lines = "".join(f"{_fmt(e)} {_fmt(d)}\n" for e, d in zip(result["epsilons"], result["distances"]))
        _write_text(out / "closeness.dat", "# eps distance\n" + lines)
    elif check == "transcritical-breakage":
        result = checks.check_transcritical_breakage(float(args.eps or 0.02), params.get("c", 1.0))
    elif check == "pitchfork-cusp":
        result = checks.check_pitchfork_cusp(float(args.eps or 0.1), params.get("c", 1.0))
    else:
        result = checks.check_saddle_node_conditions()
    _write_text(out / f"verify-{check}.json", _dump(result))
    sys.stdout.write(_dump({"check": check, "pass": result["pass"]}))
    return EXIT_OK if result["pass"] else EXIT_MATH


COMMANDS = {"average": cmd_average, "continue": cmd_continue, "sweep": cmd_sweep,
            "scan": cmd_scan, "verify": cmd_verify}


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="avcat", description="Averaging, Melnikov functions and perturbed bifurcation diagrams.")
    common = _Parser(add_help=False)
    common.add_argument("--system", default=None,
                        help=f"built-in ({', '.join(CATALOG)}) or path to a system file")
    common.add_argument("--param", action="append", metavar="NAME=VALUE",
                        help="built-in system parameter, e.g. c=1 (repeatable)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--config", default=None, help="JSON file; its keys override the flags")
    common.add_argument("--mu-min", type=float, default=-1.0)
    common.add_argument("--mu-max", type=float, default=1.0)
    common.add_argument("--x-min", type=float, default=None, help="default -1.5 (-1 for closeness)")
    common.add_argument("--x-max", type=float, default=None, help="default 1.5 (1 for closeness)")
    common.add_argument("--grid", type=int, default=None, help="grid size (meaning depends on the command)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    a = sub.add_parser("average", parents=[common], help="detect ell and tabulate g_i")
    a.set_defaults(eps=None)
    c = sub.add_parser("continue", parents=[common], help="continue fixed-point branches in mu")
    c.add_argument("--eps", type=float, default=0.1)
    s = sub.add_parser("sweep", parents=[common], help="sample the catastrophe surface")
    s.add_argument("--eps", default="0", help="comma-separated eps values")
    sc = sub.add_parser("scan", parents=[common], help="brute-force fixed-point count (n = 1)")
    sc.add_argument("--eps", type=float, default=0.1)
    sc.add_argument("--mu", type=float, default=0.0)
    v = sub.add_parser("verify", parents=[common], help="run a verification check")
    v.add_argument("--check", required=True, choices=sorted(checks.CHECKS))
    v.add_argument("--eps", default=None, help="eps (or comma-separated ladder for closeness)")
    return p


def _apply_config(args, parser) -> None:
    if not args.config:
        return
    try:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {args.config!r}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    for key, value in data.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr) or attr in ("command", "config"):
            raise UsageError(f"unknown config key {key!r}")
        setattr(args, attr, value)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args, parser)
        if args.system is None:
            if args.command != "verify":
                raise UsageError("--system is required")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"avcat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NoGuidingSystemError as exc:
        print(f"avcat: no guiding system: {exc}", file=sys.stderr)
        return EXIT_MATH
    except DivergenceError as exc:
        print(f"avcat: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AvcatError as exc:
        # malformed system files, bad parameters and violated preconditions
        print(f"avcat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
