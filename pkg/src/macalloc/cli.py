"""Command-line entry point.

Subcommands read JSON configs (or a named preset) and write results to
``--out-dir``; a short result is also printed to stdout. Errors exit
nonzero with a one-line JSON object on stderr.

Trace CSV columns, in order:
  n, h_1..h_M, r_1..r_M, utility, avg_r_1..avg_r_M, queue_1..queue_M,
  iters, measured
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, presets
from .power_control import section4_solve
from .projection import approximate_project_trace, rate_split_check
from .region import GaussianMacRegion, averaged_region_exact, feasibility_report, is_feasible
from .solvers import (StepsizeRule, brute_force_optimum, conditional_gradient_solve,
                      gradient_projection_solve)
from .channel import FadingProcess


class CliError(Exception):
    def __init__(self, msg, code=2):
        super().__init__(msg)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, 2)


def _load_json(arg):
    if arg is None:
        return None
    text = arg.lstrip()
    if text[:1] in "{[":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise CliError(f"bad inline JSON: {exc}") from None
    p = Path(arg)
    if not p.is_file():
        raise CliError(f"no such config file: {arg}")
    return json.loads(p.read_text())


def _floats(text):
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError:
        raise CliError(f"cannot parse numbers from {text!r}") from None


def _region(args):
    cfg = _load_json(args.region)
    if cfg is None:
        raise CliError("--region is required")
    if "process" in cfg:
        return averaged_region_exact(FadingProcess.from_dict(cfg["process"]), cfg["powers"],
                                     float(cfg.get("noise", 1.0)))
    return GaussianMacRegion.from_dict(cfg)


def _points(args):
    pts = [_floats(p) for p in (args.point or [])]
    if args.points:
        pts.extend(_load_json(args.points))
    if not pts:
        raise CliError("give at least one --point or --points")
    return [np.asarray(p, dtype=float) for p in pts]


def _emit(obj, args, name):
    """Print a result and write it to ``out_dir``."""
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = obj if isinstance(obj, list) else [obj]
    if args.format == "json":
        text = json.dumps(obj, indent=2, default=harness._json_default)
        (out_dir / f"{name}.json").write_text(text + "\n")
        print(text)
        return
    flat = [_flatten(r) for r in rows]
    cols = []
    for r in flat:
        cols.extend(c for c in r if c not in cols)
    path = out_dir / f"{name}.csv"
    harness.write_csv(path, cols, [[r.get(c) for c in cols] for r in flat])
    sys.stdout.write(path.read_text())


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, (list, tuple, np.ndarray)):
            for i, x in enumerate(v):
                if isinstance(x, (list, tuple, dict)):
                    out[f"{key}_{i + 1}"] = json.dumps(x, default=harness._json_default)
                else:
                    out[f"{key}_{i + 1}"] = x
        else:
            out[key] = v
    return out


def cmd_project(args):
    region = _region(args)
    out = []
    for y in _points(args):
        pr = approximate_project_trace(y, region)
        out.append({"input": y.tolist(), "projection": pr.point.tolist(),
                    "projected_subsets": [list(s) for s in pr.projected],
                    "feasible": is_feasible(region, pr.point)})
    _emit(out, args, "project")


def cmd_check(args):
    region = _region(args)
    out = []
    for r in _points(args):
        rec = {"rates": r.tolist(),
               "violations": [{"subset": list(s), "excess": float(e)}
                              for s, e in feasibility_report(region, r)]}
        if isinstance(region, GaussianMacRegion):
            rec["rate_split"] = rate_split_check(region.powers, r, region.gains,
                                                 region.noise).to_dict()
        rec["feasible"] = not rec["violations"]
        out.append(rec)
    _emit(out, args, "check")


def cmd_solve(args):
    u = harness.utility_from_dict(_load_json(args.utility))
    if args.method == "power-control":
        cfg = _load_json(args.region)
        proc = FadingProcess.from_dict(cfg["process"])
        sol = section4_solve(proc, u, cfg["pbar"], float(cfg.get("noise", 1.0)),
                             n_samples=args.samples, seed=args.seed or 0)
        _emit({"rates": sol.rates, "utility": u.value(sol.rates), "mu": sol.mu,
               "lambda": sol.lam, "iterations": sol.report.iterations}, args, "solve")
        return
    region = _region(args)
    rep = None
    if args.method == "gp":
        rule = StepsizeRule(args.step, args.step_value)
        rep = gradient_projection_solve(region, u, rule, max_iter=args.max_iter,
                                        record_violations=region.m <= 12, keep_iterates=True)
    elif args.method == "fw":
        rep = conditional_gradient_solve(region, u, max_iter=args.max_iter, keep_iterates=True)
    if rep is None:
        r = brute_force_optimum(region, u)
        out = {"point": r.tolist(), "utility": u.value(r)}
    else:
        out = {k: v for k, v in rep.to_dict().items() if k not in ("utilities", "gaps",
                                                                    "violations")}
        _write_iterations(rep, Path(args.out_dir) / "solve_iterations.csv")
    if args.bits:
        out["point_bits"] = (np.asarray(out["point"]) / np.log(2.0)).tolist()
    _emit(out, args, "solve")


def _write_iterations(rep, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, (x, val) in enumerate(zip(rep.iterates, rep.utilities)):
        # violations[k] belongs to the step that produced iterate k+1
        v = rep.violations[k - 1] if 0 < k <= len(rep.violations) else None
        rows.append([k, val, float(np.linalg.norm(x - rep.point)), v])
    harness.write_csv(path, ["iter", "utility", "distance_to_final", "violations"], rows)


def _experiment_config(args):
    cfg = _load_json(args.config) if args.config else None
    if cfg is None:
        if not args.preset:
            raise CliError("give --config or --preset")
        cfg = presets.get_preset(args.preset)
    for key in ("horizon", "replications"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def cmd_simulate(args):
    cfg = _experiment_config(args)
    res = harness.run_experiment(cfg, args.out_dir, args.format, args.workers, args.bounds)
    summary = res.summary()
    if args.format == "json":
        print(json.dumps(summary, indent=2, default=harness._json_default))
    else:
        sys.stdout.write((Path(args.out_dir) / f"{res.spec.exp_id}_summary.csv").read_text())
    bad = sum(r.n_infeasible for r in res.records if r.n_infeasible > 0)
    if bad:
        raise CliError(f"{bad} trace rows were infeasible for their region", 3)


def cmd_bounds(args):
    cfg = _experiment_config(args)
    rep = harness.bounds_report(cfg)
    _emit(rep, args, f"{cfg.get('id', 'bounds')}_bounds")
    if args.curves:
        path = Path(args.out_dir) / f"{cfg.get('id', 'bounds')}_bound_curves.csv"
        harness.emit_bound_curves(cfg, path)


def cmd_upload(args):
    cfg = _experiment_config(args)
    if args.files:
        cfg["file_sizes"] = _floats(args.files)
    res = harness.run_upload(cfg, args.out_dir, args.workers)
    if args.format == "json":
        print(json.dumps([r.row() for r in res.records], indent=2))
    else:
        sys.stdout.write((Path(args.out_dir) / f"{res.spec.exp_id}_upload.csv").read_text())
    if res.unfinished:
        raise CliError(f"{len(res.unfinished)} runs left users unfinished; raise max_slots", 3)


def build_parser():
    p = _Parser(prog="macalloc", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seed", type=int, default=None, help="base seed (default: config or 0)")
    p.add_argument("--out-dir", default=".", help="directory for output files")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def region_args(sp):
        sp.add_argument("--region", help="region JSON (file or inline): "
                        "{powers, gains, noise} or {process, powers, noise}")
        sp.add_argument("--point", action="append", help="comma-separated rate vector")
        sp.add_argument("--points", help="JSON list of rate vectors")

    sp = sub.add_parser("project", help="approximate projection onto a region")
    region_args(sp)
    sp.set_defaults(func=cmd_project)

    sp = sub.add_parser("check", help="feasibility and rate-splitting verdict")
    region_args(sp)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("solve", help="maximize a utility over a region")
    sp.add_argument("--region", help="region JSON; for power-control {process, pbar, noise}")
    sp.add_argument("--utility", required=True, help="utility JSON {weights, alpha, r_min}")
    sp.add_argument("--method", choices=("gp", "fw", "brute", "power-control"), default="gp")
    sp.add_argument("--step", choices=("backtracking", "constant", "diminishing", "safe"),
                    default="backtracking")
    sp.add_argument("--step-value", type=float, default=1.0)
    sp.add_argument("--max-iter", type=int, default=5000)
    sp.add_argument("--samples", type=int, default=2000)
    sp.add_argument("--bits", action="store_true", help="also report rates in bits")
    sp.set_defaults(func=cmd_solve)

    def exp_args(sp, with_horizon=True):
        sp.add_argument("--config", help="experiment JSON (file or inline)")
        sp.add_argument("--preset", choices=sorted(presets.PRESETS))
        if with_horizon:
            sp.add_argument("--horizon", type=int)
        sp.add_argument("--replications", type=int)
        sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("simulate", help="run policies over sampled channel paths")
    exp_args(sp)
    sp.add_argument("--bounds", action="store_true", help="also evaluate the gap bounds")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("bounds", help="evaluate every bound calculator")
    sp.add_argument("--config")
    sp.add_argument("--preset", choices=sorted(presets.PRESETS))
    sp.add_argument("--curves", action="store_true", help="write bound curves CSV")
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("upload", help="file-upload completion times")
    exp_args(sp, with_horizon=False)
    sp.add_argument("--files", help="comma-separated file sizes (nats, same for all users)")
    sp.set_defaults(func=cmd_upload)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
        return 0
    except CliError as exc:
        err, code = exc, exc.code
    except (ValueError, KeyError, RuntimeError, OSError, TypeError) as exc:
        err, code = exc, 1
    json.dump({"error": type(err).__name__, "message": str(err)}, sys.stderr)
    sys.stderr.write("\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
