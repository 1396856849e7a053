"""Per-slot rate allocation policies over a sampled channel path."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bounds import TrackingParameters
from .channel import ChannelPath, slot_variation
from .projection import approximate_project
from .region import GaussianMacRegion, RegionError, linear_maximize
from .solvers import StepsizeRule, gradient_projection_solve
from .utility import UtilityModel


class PolicyError(RuntimeError):
    pass


@dataclass
class PolicyTrace:
    """Per-slot record of one policy on one channel path.

    ``measured[n]`` is the slot whose channel state defined the region the
    rate at slot ``n`` was computed for. ``avg_rates`` are running means of
    ``rates`` (of departures for the queue policy).
    """

    policy: str
    gains: np.ndarray
    rates: np.ndarray
    utility: np.ndarray
    avg_rates: np.ndarray
    iters: np.ndarray
    measured: np.ndarray
    queues: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return self.rates.shape[0]

    @property
    def m(self) -> int:
        return self.rates.shape[1]


def _running_mean(x):
    return np.cumsum(x, axis=0) / np.arange(1, x.shape[0] + 1)[:, None]


def _finish(policy, path, u, rates, iters, measured, queues=None, served=None, extra=None):
    utility = np.array([u.value(r) for r in rates])
    avg = _running_mean(rates if served is None else served)
    return PolicyTrace(policy, np.asarray(path.gains), rates, utility, avg, iters,
                       measured, queues, extra or {})


def _restrict(u: UtilityModel, active) -> UtilityModel:
    if u.kind != "alpha_fair":
        raise PolicyError("restricting a generic utility to a user subset is not supported")
    return UtilityModel.alpha_fair(np.asarray(u.weights)[active], u.alpha, u.r_min)


class GreedySolver:
    """Per-state utility maximizer with a cache keyed by channel state.

    Cache misses are solved by gradient projection warm-started from the
    previous answer.
    """

    def __init__(self, u: UtilityModel, powers, noise: float = 1.0, tol: float = 1e-12,
                 cache: bool = True):
        self.u = u
        self.powers = np.asarray(powers, dtype=float)
        self.noise = float(noise)
        self.tol = tol
        self.cache = {} if cache else None
        self._sub = {}
        self._last = {}

    def region(self, h) -> GaussianMacRegion:
        return GaussianMacRegion(self.powers, h, self.noise)

    def __call__(self, h, active=None) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        m = self.powers.shape[0]
        act = np.ones(m, dtype=bool) if active is None else np.asarray(active, dtype=bool)
        key = (h.tobytes(), act.tobytes())
        if self.cache is not None and key in self.cache:
            return self.cache[key].copy()
        out = np.zeros(m)
        if act.any():
            ak = act.tobytes()
            if ak not in self._sub:
                self._sub[ak] = self.u if act.all() else _restrict(self.u, act)
            reg = GaussianMacRegion(self.powers[act], h[act], self.noise)
            start = self._last.get(ak)
            rep = gradient_projection_solve(reg, self._sub[ak], start=start, tol=self.tol)
            out[act] = rep.point
            self._last[ak] = rep.point
        if self.cache is not None:
            self.cache[key] = out.copy()
        return out


def greedy_step(h, u: UtilityModel, powers, noise: float = 1.0, start=None,
                tol: float = 1e-12) -> np.ndarray:
    """Utility-maximizing rate vector for the single channel state ``h``."""
    reg = GaussianMacRegion(powers, h, noise)
    try:
        return gradient_projection_solve(reg, u, start=start, tol=tol).point
    except Exception as exc:
        raise PolicyError(f"greedy solve failed at gains {list(map(float, h))}: {exc}") from exc


def greedy_run(path: ChannelPath, u: UtilityModel, powers, noise: float = 1.0,
               solver: Optional[GreedySolver] = None) -> PolicyTrace:
    solver = solver or GreedySolver(u, powers, noise)
    n, m = path.gains.shape
    rates = np.empty((n, m))
    for t in range(n):
        rates[t] = solver(path.gains[t])
    return _finish("greedy", path, u, rates, np.zeros(n, dtype=np.int64), np.arange(n))


def _iterate(region, u, start, alpha, k):
    """``k`` constant-step gradient projection steps; best iterate of the
    ``k + 1`` visited points (the projected start included)."""
    R = approximate_project(start, region)
    best, best_u = R, u.value(R)
    for _ in range(k):
        R = approximate_project(R + alpha * u.gradient(R), region)
        v = u.value(R)
        if v > best_u:
            best, best_u = R, v
    return best


def approximate_policy_run(path: ChannelPath, u: UtilityModel, powers, noise: float,
                           params: TrackingParameters,
                           solver: Optional[GreedySolver] = None) -> PolicyTrace:
    """Block policy: the channel is measured every ``k`` slots and ``k``
    gradient-projection steps are taken on the measured region, starting
    from the current output. Slot 0 uses the greedy point."""
    k = int(params.k)
    if k < 1:
        raise PolicyError("k must be >= 1")
    solver = solver or GreedySolver(u, powers, noise)
    gains = path.gains
    n, m = gains.shape
    rates = np.empty((n, m))
    iters = np.zeros(n, dtype=np.int64)
    measured = np.zeros(n, dtype=np.int64)
    rates[0] = solver(gains[0])
    p = np.asarray(powers, dtype=float)
    t = 0
    while k * t + 1 < n:
        kt = k * t
        reg = GaussianMacRegion(p, gains[kt], noise)
        out = _iterate(reg, u, rates[kt], params.alpha, k)
        lo, hi = kt + 1, min(kt + k, n - 1)
        rates[lo:hi + 1] = out
        measured[lo:hi + 1] = kt
        iters[lo] = k
        t += 1
    return _finish("approximate", path, u, rates, iters, measured,
                   extra={"k": k, "alpha": params.alpha})


def improved_policy_run(path: ChannelPath, u: UtilityModel, powers, noise: float,
                        gamma: float, k: int, alpha: float,
                        solver: Optional[GreedySolver] = None) -> PolicyTrace:
    """Threshold policy: ``k`` steps are taken on the current region each
    time the accumulated per-slot variation ``W_n`` reaches ``gamma``."""
    if not gamma > 0 or k < 1:
        raise PolicyError("need gamma > 0 and k >= 1")
    solver = solver or GreedySolver(u, powers, noise)
    gains = path.gains
    n, m = gains.shape
    p = np.asarray(powers, dtype=float)
    W = slot_variation(gains, p)
    rates = np.empty((n, m))
    iters = np.zeros(n, dtype=np.int64)
    measured = np.zeros(n, dtype=np.int64)
    rates[0] = solver(gains[0])
    thresholds = [0]
    if n > 1:
        out = _iterate(GaussianMacRegion(p, gains[0], noise), u, rates[0], alpha, k)
        iters[1] = k
    meas = 0
    acc = 0.0
    for t in range(1, n):
        rates[t] = out
        measured[t] = meas
        acc += W[t - 1]
        if acc >= gamma:
            acc = 0.0
            thresholds.append(t)
            meas = t
            out = _iterate(GaussianMacRegion(p, gains[t], noise), u, rates[t], alpha, k)
            if t + 1 < n:
                iters[t + 1] = k
    return _finish("improved", path, u, rates, iters, measured,
                   extra={"k": k, "alpha": alpha, "gamma": gamma,
                          "thresholds": np.array(thresholds)})


def renewal_ratio(thresholds, n: int, k: int) -> float:
    """``n / (t(n) k)`` with ``t(n) = max{i : T_i < n}``."""
    t = int(np.searchsorted(np.asarray(thresholds), n, side="left")) - 1
    if t < 1:
        return float("inf")
    return n / (t * k)


def _arrival_mean(u: UtilityModel, x, K, D):
    w = u.w
    with np.errstate(divide="ignore"):
        ratio = np.where(x > 0, K * (w / np.where(x > 0, x, 1.0)) ** (1.0 / u.alpha), np.inf)
    return np.minimum(ratio, D)


def _draw(mean, arrivals, rng, scale):
    if arrivals == "deterministic":
        return mean
    if arrivals == "poisson":
        return scale * rng.poisson(mean / scale)
    raise PolicyError(f"unknown arrival model {arrivals!r}")


def queue_policy_run(path: ChannelPath, u: UtilityModel, powers, noise: float,
                     K: float, D: float, arrivals: str = "deterministic", seed=0,
                     scale: float = 0.05) -> PolicyTrace:
    """Max-weight service with a queue-driven congestion controller.

    Each slot serves ``mu(n) = argmax x(n)'R`` over the current region, and
    user ``i`` admits data with mean ``min(K (w_i/x_i)^(1/alpha), D)``
    (deterministic, or ``scale * Poisson(mean/scale)``). ``rates`` holds the
    allocated service vector; ``avg_rates`` the running mean of departures.
    """
    if not (K > 0 and D > 0):
        raise PolicyError("K and D must be positive")
    if u.kind != "alpha_fair" or u.alpha <= 0:
        raise PolicyError("queue controller needs an alpha-fair utility with alpha > 0")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    gains = path.gains
    n, m = gains.shape
    p = np.asarray(powers, dtype=float)
    x = np.zeros(m)
    rates = np.empty((n, m))
    served = np.empty((n, m))
    admitted = np.empty((n, m))
    queues = np.empty((n, m))
    for t in range(n):
        queues[t] = x
        mu = linear_maximize(GaussianMacRegion(p, gains[t], noise), x)
        a = _draw(_arrival_mean(u, x, K, D), arrivals, rng, scale)
        served[t] = np.minimum(x, mu)
        rates[t] = mu
        admitted[t] = a
        x = np.maximum(0.0, x - mu) + a
    return _finish("queue", path, u, rates, np.zeros(n, dtype=np.int64), np.arange(n),
                   queues=queues, served=served,
                   extra={"admitted": admitted, "served": served, "K": K, "D": D})


@dataclass(frozen=True)
class UploadResult:
    policy: str
    files: np.ndarray
    completion: np.ndarray
    finished: np.ndarray

    @property
    def upload_rates(self) -> np.ndarray:
        return self.files / self.completion

    def utility(self, u: UtilityModel) -> float:
        return u.value(self.upload_rates)


def greedy_upload(path: ChannelPath, u: UtilityModel, powers, noise: float, files,
                  solver: Optional[GreedySolver] = None) -> UploadResult:
    """Greedy allocation among unfinished users until every file is sent.

    ``completion[i]`` counts slots until user ``i``'s cumulative rate reaches
    its file size (``inf`` if the path ends first)."""
    f = np.asarray(files, dtype=float)
    if np.any(f <= 0):
        raise PolicyError("file sizes must be positive")
    solver = solver or GreedySolver(u, powers, noise)
    m = f.shape[0]
    sent = np.zeros(m)
    done = np.full(m, np.inf)
    for t in range(len(path)):
        active = ~np.isfinite(done)
        if not active.any():
            break
        sent += solver(path.gains[t], active)
        newly = active & (sent >= f)
        done[newly] = t + 1
    return UploadResult("greedy", f, done, np.isfinite(done))


def queue_upload(path: ChannelPath, u: UtilityModel, powers, noise: float, files,
                 K: float, D: float, arrivals: str = "deterministic", seed=0,
                 scale: float = 0.05) -> UploadResult:
    """Queue policy on finite files: admission is capped by the unadmitted
    remainder and a user finishes once its whole file has departed."""
    f = np.asarray(files, dtype=float)
    if np.any(f <= 0):
        raise PolicyError("file sizes must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    p = np.asarray(powers, dtype=float)
    m = f.shape[0]
    x = np.zeros(m)
    left = f.copy()
    departed = np.zeros(m)
    done = np.full(m, np.inf)
    for t in range(len(path)):
        if np.all(np.isfinite(done)):
            break
        mu = linear_maximize(GaussianMacRegion(p, path.gains[t], noise), x)
        dep = np.minimum(x, mu)
        a = np.minimum(_draw(_arrival_mean(u, x, K, D), arrivals, rng, scale), left)
        left -= a
        departed += dep
        x = x - dep + a
        newly = ~np.isfinite(done) & (departed >= f * (1.0 - 1e-12))
        done[newly] = t + 1
    return UploadResult("queue", f, done, np.isfinite(done))
