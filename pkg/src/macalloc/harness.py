"""Seeded experiment runner with CSV/JSON output.

Every replication gets its own seed from a counter-based split of the base
seed, so adding replications never changes existing ones. Floats are
written with 17 significant digits, which round-trips doubles exactly.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bounds import (BoundError, TrackingParameters, average_case_parameters, curvature_bound,
                     delta_grid, estimate_utility_constants, gap_bound_curvature,
                     gap_bound_variation, greedy_gap, opt_distance_bound, optimize_bounds,
                     r_epsilon, worst_case_parameters)
from .channel import (FadingProcess, sample_path, sigma_H_squared, step_statistics)
from .policies import (GreedySolver, PolicyTrace, approximate_policy_run, greedy_run,
                       greedy_upload, improved_policy_run, queue_policy_run, queue_upload,
                       renewal_ratio)
from .region import (GaussianMacRegion, MAX_ENUM_USERS, averaged_region_exact,
                     feasibility_report)
from .solvers import brute_force_optimum, gradient_projection_solve
from .utility import UtilityModel

log = logging.getLogger(__name__)

POLICIES = ("greedy", "approximate", "improved", "queue")
MAX_CONSTANT_REGIONS = 256


class HarnessError(ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def replication_seed(base: int, rep: int) -> int:
    """Seed of replication ``rep``, derived from ``base`` by spawn key."""
    state = np.random.SeedSequence(int(base), spawn_key=(int(rep),)).generate_state(2, np.uint64)
    return int(state[0]) << 64 | int(state[1])


def utility_from_dict(d: dict) -> UtilityModel:
    if d.get("kind", "alpha_fair") != "alpha_fair":
        raise HarnessError("only alpha_fair utilities can be configured from JSON")
    return UtilityModel.from_dict(d)


@dataclass
class ExperimentSpec:
    exp_id: str
    process: FadingProcess
    powers: np.ndarray
    noise: float
    utility: UtilityModel
    policies: list
    horizon: int
    replications: int = 1
    seed: int = 0
    constants: Optional[dict] = None
    checkpoints: tuple = ()
    check_feasibility: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        try:
            process = FadingProcess.from_dict(d["process"])
            powers = np.asarray(d["powers"], dtype=float)
            u = utility_from_dict(d["utility"])
            spec = cls(str(d.get("id", "experiment")), process, powers,
                       float(d.get("noise", 1.0)), u, list(d["policies"]), int(d["horizon"]),
                       int(d.get("replications", 1)), int(d.get("seed", 0)),
                       d.get("constants"), tuple(int(c) for c in d.get("checkpoints", ())),
                       bool(d.get("check_feasibility", True)))
        except KeyError as exc:
            raise HarnessError(f"experiment spec is missing field {exc}") from None
        spec.validate()
        return spec

    def validate(self):
        if self.horizon < 1:
            raise HarnessError("horizon must be >= 1")
        if self.replications < 1:
            raise HarnessError("replications must be >= 1")
        if self.powers.shape != (self.process.m,):
            raise HarnessError("powers length does not match the process")
        if self.utility.m != self.process.m:
            raise HarnessError("utility weights do not match the number of users")
        if not self.policies:
            raise HarnessError("no policies given")
        for p in self.policies:
            if p.get("name") not in POLICIES:
                raise HarnessError(f"unknown policy {p.get('name')!r}; choose from {POLICIES}")

    def default_checkpoints(self):
        if self.checkpoints:
            return tuple(c for c in self.checkpoints if 1 <= c <= self.horizon)
        pts = [10 ** j for j in range(1, 12) if 10 ** j < self.horizon]
        return tuple(pts + [self.horizon])


@dataclass
class SummaryRecord:
    exp_id: str
    policy: str
    replication: int
    seed: int
    final_avg_rates: list
    utility_at_avg: float
    distance: dict
    max_tracking_distance: Optional[float]
    tracking_radius: Optional[float]
    n_infeasible: int
    params: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def row(self) -> dict:
        out = {"experiment": self.exp_id, "policy": self.policy,
               "replication": self.replication, "seed": self.seed}
        for i, r in enumerate(self.final_avg_rates):
            out[f"avg_r_{i + 1}"] = r
        out["utility_at_avg"] = self.utility_at_avg
        for n, d in self.distance.items():
            out[f"dist_{n}"] = d
        out["max_tracking_distance"] = self.max_tracking_distance
        out["tracking_radius"] = self.tracking_radius
        out["n_infeasible"] = self.n_infeasible
        return out


def reference_optimum(process, powers, noise, u):
    """Utility maximizer over the exactly averaged region."""
    ca = averaged_region_exact(process, powers, noise)
    if process.m <= 3:
        return brute_force_optimum(ca, u)
    return gradient_projection_solve(ca, u).point


def state_regions(process, powers, noise, limit: int = MAX_CONSTANT_REGIONS):
    states, _ = process.joint_stationary()
    if states.shape[0] > limit:
        idx = np.linspace(0, states.shape[0] - 1, limit).round().astype(int)
        states = states[idx]
    return [GaussianMacRegion(powers, h, noise) for h in states]


def resolve_constants(spec: ExperimentSpec) -> dict:
    """User-given ``A`` and ``B`` or estimates over the chain's regions."""
    if spec.constants and "A" in spec.constants and "B" in spec.constants:
        return {"A": float(spec.constants["A"]), "B": float(spec.constants["B"]),
                "estimated": False}
    est = estimate_utility_constants(spec.utility,
                                     state_regions(spec.process, spec.powers, spec.noise),
                                     seed=spec.seed)
    return {"A": est.A, "B": est.B, "Omega": est.Omega, "estimated": True}


def policy_parameters(spec: ExperimentSpec, needs_constants: bool) -> dict:
    stats = step_statistics(spec.process, spec.powers)
    out = {"w_hat": stats.w_hat, "w_bar": stats.w_bar}
    if needs_constants:
        out.update(resolve_constants(spec))
    return out


def _policy_setup(pol: dict, shared: dict):
    name = pol["name"]
    if name == "approximate":
        if "k" in pol:
            return TrackingParameters(int(pol["k"]), float(pol["alpha"]),
                                      float(pol.get("radius", math.inf)))
        return worst_case_parameters(shared["A"], shared["B"], shared["w_hat"])
    if name == "improved":
        if "gamma" in pol:
            return TrackingParameters(int(pol["k"]), float(pol["alpha"]),
                                      float(pol.get("radius", math.inf)),
                                      gamma=float(pol["gamma"]))
        return average_case_parameters(shared["A"], shared["B"], shared["w_hat"],
                                       shared["w_bar"])
    return None


def _run_policy(pol, params, path, spec, solver) -> PolicyTrace:
    name = pol["name"]
    u, p, n0 = spec.utility, spec.powers, spec.noise
    if name == "greedy":
        return greedy_run(path, u, p, n0, solver)
    if name == "approximate":
        return approximate_policy_run(path, u, p, n0, params, solver)
    if name == "improved":
        return improved_policy_run(path, u, p, n0, params.gamma, params.k, params.alpha, solver)
    return queue_policy_run(path, u, p, n0, float(pol["K"]), float(pol["D"]),
                            pol.get("arrivals", "deterministic"), path.seed,
                            float(pol.get("scale", 0.05)))


def count_infeasible(trace: PolicyTrace, powers, noise) -> int:
    """Rows infeasible for the region of their measurement slot."""
    bad = 0
    regions = {}
    for n in range(len(trace)):
        h = trace.gains[trace.measured[n]]
        key = h.tobytes()
        if key not in regions:
            regions[key] = GaussianMacRegion(powers, h, noise)
        if feasibility_report(regions[key], trace.rates[n]):
            bad += 1
    return bad


def trace_header(m: int, queues: bool = True) -> list:
    cols = ["n"] + [f"h_{i + 1}" for i in range(m)] + [f"r_{i + 1}" for i in range(m)]
    cols += ["utility"] + [f"avg_r_{i + 1}" for i in range(m)]
    if queues:
        cols += [f"queue_{i + 1}" for i in range(m)]
    return cols + ["iters", "measured"]


def trace_rows(trace: PolicyTrace):
    m = trace.m
    q = trace.queues if trace.queues is not None else np.zeros((len(trace), m))
    for n in range(len(trace)):
        yield ([n] + list(trace.gains[n]) + list(trace.rates[n]) + [trace.utility[n]]
               + list(trace.avg_rates[n]) + list(q[n])
               + [int(trace.iters[n]), int(trace.measured[n])])


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else fmt(v) if isinstance(v, (float, int, np.number))
                        and not isinstance(v, bool) else v for v in r])


def write_trace(trace: PolicyTrace, path: Path, fmt_name: str = "csv"):
    if fmt_name == "json":
        cols = trace_header(trace.m)
        data = [dict(zip(cols, (float(v) for v in row))) for row in trace_rows(trace)]
        path.write_text(json.dumps(data, allow_nan=True))
    else:
        write_csv(path, trace_header(trace.m), trace_rows(trace))


def _replication(args):
    spec, rep, shared, r_star, out_dir, fmt_name = args
    seed = replication_seed(spec.seed, rep)
    path = sample_path(spec.process, spec.horizon, seed)
    solver = GreedySolver(spec.utility, spec.powers, spec.noise)
    traces = {}
    records = []
    greedy_rates = None
    checkpoints = spec.default_checkpoints()
    for pol in spec.policies:
        t0 = time.perf_counter()
        params = _policy_setup(pol, shared)
        trace = _run_policy(pol, params, path, spec, solver)
        wall = time.perf_counter() - t0
        traces[pol["name"]] = trace
        if pol["name"] == "greedy":
            greedy_rates = trace.rates
        avg = trace.avg_rates[-1]
        dist = {n: float(np.linalg.norm(trace.avg_rates[n - 1] - r_star)) for n in checkpoints}
        extra = {} if params is None else params.to_dict()
        if pol["name"] == "improved":
            extra["renewal_ratio"] = renewal_ratio(trace.extra["thresholds"], spec.horizon,
                                                   params.k)
        if pol["name"] == "queue":
            extra.update(K=float(pol["K"]), D=float(pol["D"]))
        n_bad = (count_infeasible(trace, spec.powers, spec.noise)
                 if spec.check_feasibility else -1)
        records.append(SummaryRecord(spec.exp_id, pol["name"], rep, seed, avg.tolist(),
                                     spec.utility.value(avg), dist, None,
                                     None if params is None else params.radius, n_bad,
                                     extra, wall))
        if out_dir is not None:
            suffix = "json" if fmt_name == "json" else "csv"
            write_trace(trace, Path(out_dir) / f"{spec.exp_id}_rep{rep}_{pol['name']}.{suffix}",
                        fmt_name)
    if greedy_rates is not None:
        for rec in records:
            d = np.linalg.norm(traces[rec.policy].rates - greedy_rates, axis=1)
            rec.max_tracking_distance = float(d.max())
    return records


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    r_star: np.ndarray
    shared: dict
    records: list

    def by_policy(self, name: str) -> list:
        return [r for r in self.records if r.policy == name]

    def median_distance(self, name: str, n: Optional[int] = None) -> float:
        n = self.spec.horizon if n is None else n
        return float(np.median([r.distance[n] for r in self.by_policy(name)]))

    def summary(self) -> dict:
        return {"experiment": self.spec.exp_id, "r_star": self.r_star.tolist(),
                "u_star": self.spec.utility.value(self.r_star),
                "parameters": self.shared,
                "records": [dict(r.row(), params=r.params, wall_clock=r.wall_clock)
                            for r in self.records]}


def run_experiment(spec, out_dir=None, fmt_name: str = "csv", workers: int = 1,
                   bounds: bool = False) -> ExperimentResult:
    """Run every policy on shared per-replication channel paths.

    Writes one trace file per (replication, policy) plus ``*_summary.csv``
    and ``*_summary.json`` when ``out_dir`` is given. With ``workers > 1``
    replications run in a process pool; results do not depend on it.
    """
    if isinstance(spec, dict):
        spec = ExperimentSpec.from_dict(spec)
    needs = any(p["name"] in ("approximate", "improved") and "k" not in p
                for p in spec.policies)
    shared = policy_parameters(spec, needs)
    r_star = reference_optimum(spec.process, spec.powers, spec.noise, spec.utility)
    if bounds:
        A = shared.get("A") or resolve_constants(spec)["A"]
        B = shared.get("B") or spec.utility.B
        shared["bounds"] = optimize_bounds(spec.process, spec.powers, spec.noise,
                                           spec.utility, A, B, r_star).to_dict()
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(spec, rep, shared, r_star, out_dir, fmt_name) for rep in range(spec.replications)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_replication, jobs))
    else:
        chunks = [_replication(j) for j in jobs]
    records = [r for c in chunks for r in c]
    result = ExperimentResult(spec, r_star, shared, records)
    if out_dir is not None:
        rows = [r.row() for r in records]
        write_csv(Path(out_dir) / f"{spec.exp_id}_summary.csv", list(rows[0]),
                  [list(r.values()) for r in rows])
        (Path(out_dir) / f"{spec.exp_id}_summary.json").write_text(
            json.dumps(result.summary(), indent=2, default=_json_default))
    return result


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


@dataclass
class UploadSpec:
    exp_id: str
    process: FadingProcess
    powers: np.ndarray
    noise: float
    utility: UtilityModel
    file_sizes: list
    policies: list
    replications: int = 1
    seed: int = 0
    max_slots: int = 20_000

    @classmethod
    def from_dict(cls, d: dict) -> "UploadSpec":
        try:
            process = FadingProcess.from_dict(d["process"])
            m = process.m
            files = []
            for f in d["file_sizes"]:
                arr = np.broadcast_to(np.asarray(f, dtype=float), (m,)).copy()
                files.append(arr)
            spec = cls(str(d.get("id", "upload")), process, np.asarray(d["powers"], dtype=float),
                       float(d.get("noise", 1.0)), utility_from_dict(d["utility"]), files,
                       list(d["policies"]), int(d.get("replications", 1)),
                       int(d.get("seed", 0)), int(d.get("max_slots", 20_000)))
        except KeyError as exc:
            raise HarnessError(f"upload spec is missing field {exc}") from None
        for f in spec.file_sizes:
            if np.any(f <= 0):
                raise HarnessError("file sizes must be positive")
        for p in spec.policies:
            if p.get("name") not in ("greedy", "queue"):
                raise HarnessError("upload supports the greedy and queue policies")
        if spec.powers.shape != (m,) or spec.utility.m != m:
            raise HarnessError("powers/utility do not match the number of users")
        return spec


@dataclass
class UploadRecord:
    exp_id: str
    policy: str
    replication: int
    seed: int
    files: list
    completion: list
    utility: float
    unfinished: list

    def row(self) -> dict:
        out = {"experiment": self.exp_id, "policy": self.policy,
               "replication": self.replication, "seed": self.seed}
        for i, (f, t) in enumerate(zip(self.files, self.completion)):
            out[f"file_{i + 1}"] = f
            out[f"T_{i + 1}"] = t
        out["utility"] = self.utility
        return out


@dataclass
class UploadResult:
    spec: UploadSpec
    records: list

    @property
    def unfinished(self) -> list:
        return [r for r in self.records if r.unfinished]

    def median_difference(self, files, a: str = "greedy", b: str = "queue") -> float:
        """Median over replications of ``u_a - u_b`` at file vector ``files``."""
        f = list(np.broadcast_to(np.asarray(files, dtype=float), (self.spec.process.m,)))
        ua = {r.replication: r.utility for r in self.records if r.policy == a and r.files == f}
        ub = {r.replication: r.utility for r in self.records if r.policy == b and r.files == f}
        return float(np.median([ua[k] - ub[k] for k in sorted(ua)]))


def _upload_rep(args):
    spec, rep = args
    seed = replication_seed(spec.seed, rep)
    path = sample_path(spec.process, spec.max_slots, seed)
    solver = GreedySolver(spec.utility, spec.powers, spec.noise)
    out = []
    for f in spec.file_sizes:
        for pol in spec.policies:
            if pol["name"] == "greedy":
                res = greedy_upload(path, spec.utility, spec.powers, spec.noise, f, solver)
            else:
                res = queue_upload(path, spec.utility, spec.powers, spec.noise, f,
                                   float(pol["K"]), float(pol["D"]),
                                   pol.get("arrivals", "deterministic"), seed,
                                   float(pol.get("scale", 0.05)))
            unfinished = [int(i) for i in np.nonzero(~res.finished)[0]]
            util = res.utility(spec.utility) if not unfinished else float("nan")
            out.append(UploadRecord(spec.exp_id, pol["name"], rep, seed, f.tolist(),
                                    res.completion.tolist(), util, unfinished))
    return out


def run_upload(spec, out_dir=None, workers: int = 1) -> UploadResult:
    """File-upload scenario: slots until each user's file is through, and the
    utility of the upload rates ``f_i / T_i``."""
    if isinstance(spec, dict):
        spec = UploadSpec.from_dict(spec)
    jobs = [(spec, rep) for rep in range(spec.replications)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_upload_rep, jobs))
    else:
        chunks = [_upload_rep(j) for j in jobs]
    result = UploadResult(spec, [r for c in chunks for r in c])
    for r in result.unfinished:
        log.warning("replication %d policy %s: users %s unfinished after %d slots",
                    r.replication, r.policy, r.unfinished, spec.max_slots)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        rows = [r.row() for r in result.records]
        write_csv(Path(out_dir) / f"{spec.exp_id}_upload.csv", list(rows[0]),
                  [list(r.values()) for r in rows])
    return result


def bound_curves(process, powers, noise, u: UtilityModel, A: float, B: float,
                 n_delta: int = 200, n_eps: int = 100, r_star=None) -> list:
    """Rows ``(bound, parameter, value)`` for both gap bounds over their free
    parameter."""
    p = np.asarray(powers, dtype=float)
    if r_star is None:
        r_star = reference_optimum(process, p, noise, u)
    u_star = u.value(r_star)
    s2 = sigma_H_squared(step_statistics(process, p), p, noise)
    rows = []
    for d in delta_grid(s2, n_delta):
        rows.append(("variation", float(d), gap_bound_variation(d, s2, A, B, u_star)))
    for eps in np.linspace(1.0 / n_eps, 1.0, n_eps):
        r = r_epsilon(eps, math.sqrt(s2), process, p, noise)
        rows.append(("curvature", float(eps),
                     gap_bound_curvature(eps, curvature_bound(u, r_star, r), r, u_star)))
    return rows


def emit_bound_curves(config: dict, out_path=None) -> list:
    """Bound curves for a JSON-style config; written as CSV when a path is given."""
    process = FadingProcess.from_dict(config["process"])
    u = utility_from_dict(config["utility"])
    powers = np.asarray(config["powers"], dtype=float)
    noise = float(config.get("noise", 1.0))
    consts = config.get("constants") or {}
    if "A" in consts and "B" in consts:
        A, B = float(consts["A"]), float(consts["B"])
    else:
        est = estimate_utility_constants(u, state_regions(process, powers, noise),
                                         seed=int(config.get("seed", 0)))
        A, B = est.A, est.B
    rows = bound_curves(process, powers, noise, u, A, B, int(config.get("n_delta", 200)),
                        int(config.get("n_eps", 100)))
    if out_path is not None:
        write_csv(Path(out_path), ["bound", "parameter", "value"], rows)
    return rows


def bounds_report(config: dict) -> dict:
    """Every bound calculator evaluated on one configuration."""
    process = FadingProcess.from_dict(config["process"])
    u = utility_from_dict(config["utility"])
    powers = np.asarray(config["powers"], dtype=float)
    noise = float(config.get("noise", 1.0))
    stats = step_statistics(process, powers)
    s2 = sigma_H_squared(stats, powers, noise)
    consts = config.get("constants") or {}
    if "A" in consts and "B" in consts:
        c = {"A": float(consts["A"]), "B": float(consts["B"]), "estimated": False}
    else:
        est = estimate_utility_constants(u, state_regions(process, powers, noise),
                                         seed=int(config.get("seed", 0)))
        c = dict(est.to_dict(), estimated=True)
    r_star = reference_optimum(process, powers, noise, u)
    out = {"sigma_H2": s2, "w_hat": stats.w_hat, "w_bar": stats.w_bar, "constants": c,
           "r_star": r_star.tolist(), "u_star": u.value(r_star)}
    for name, fn in (("worst_case", lambda: worst_case_parameters(c["A"], c["B"], stats.w_hat)),
                     ("average_case", lambda: average_case_parameters(c["A"], c["B"],
                                                                      stats.w_hat,
                                                                      stats.w_bar))):
        try:
            out[name] = fn().to_dict()
        except BoundError as exc:
            out[name] = {"error": str(exc)}
    try:
        rep = optimize_bounds(process, powers, noise, u, c["A"], c["B"], r_star)
        out["gap_bounds"] = rep.to_dict()
        out["opt_distance_bound"] = opt_distance_bound(rep.best_delta, c["A"], c["B"])
    except BoundError as exc:
        # the gap bounds assume a nonnegative utility
        out["gap_bounds"] = {"error": str(exc)}
    if process.m <= MAX_ENUM_USERS:
        g = greedy_gap(process, powers, noise, u)
        out["greedy_gap"] = g.gap
    return out
