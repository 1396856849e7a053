"""Tracking-parameter recipes and performance-gap bounds for the greedy and
approximate policies."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import sigma_H_squared, step_statistics
from .region import (MAX_ENUM_USERS, GaussianMacRegion, RegionError,
                     averaged_region_exact, vertex_for_order)
from .solvers import brute_force_optimum, gradient_projection_solve
from .utility import UtilityModel


class BoundError(ValueError):
    pass


def _pos(**kw):
    for name, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise BoundError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class TrackingParameters:
    """Block length ``k``, stepsize ``alpha`` and guaranteed tracking radius.

    ``theta`` is set by the worst-case recipe (radius ``2*theta``); ``gamma``
    and ``c`` by the average-case recipe.
    """

    k: int
    alpha: float
    radius: float
    w_prime: Optional[float] = None
    theta: Optional[float] = None
    gamma: Optional[float] = None
    c: Optional[float] = None

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise BoundError(f"k must be an integer >= 1, got {self.k}")
        if not self.alpha > 0:
            raise BoundError("alpha must be positive")
        if self.c is not None and self.c < 1:
            raise BoundError("c must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("k", "alpha", "radius", "w_prime", "theta", "gamma", "c")}


def worst_case_parameters(A: float, B: float, w_hat: float) -> TrackingParameters:
    """Block length, stepsize and radius guaranteeing per-slot tracking when
    the per-slot region change is at most ``w_hat``."""
    _pos(A=A, B=B, w_hat=w_hat)
    wp = math.sqrt(w_hat) * (math.sqrt(w_hat) + math.sqrt(B / A))
    k = math.floor((2.0 * B / (A * wp)) ** (2.0 / 3.0))
    if k < 1:
        raise BoundError(f"fading too fast for the guarantee: k = {k} < 1")
    alpha = (16.0 * A / B ** 2) ** (1.0 / 3.0) * wp ** (2.0 / 3.0)
    theta = (2.0 * B / A) ** (2.0 / 3.0) * wp ** (1.0 / 3.0)
    return TrackingParameters(k, alpha, 2.0 * theta, w_prime=wp, theta=theta)


def _c_lhs(c):
    return (c * c - 1.0) ** 8 / (256.0 * c ** 4)


def solve_c(w_hat: float, tol: float = 1e-14) -> float:
    """Root ``c >= 1`` of ``(c^2 - 1)^8 / (2^8 c^4) = w_hat``."""
    if w_hat < 0 or not math.isfinite(w_hat):
        raise BoundError("w_hat must be finite and >= 0")
    if w_hat == 0:
        return 1.0
    lo, hi = 1.0, 2.0
    while _c_lhs(hi) < w_hat:
        hi *= 2.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if _c_lhs(mid) < w_hat:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return 0.5 * (lo + hi)


def average_case_parameters(A: float, B: float, w_hat: float,
                            w_bar: float) -> TrackingParameters:
    """Threshold ``gamma``, block length, stepsize and radius for the
    threshold-triggered policy."""
    _pos(A=A, B=B, w_bar=w_bar)
    c = solve_c(w_hat)
    gamma = c * (B / A) ** 0.75 * w_bar ** 0.25
    k = math.floor(gamma / w_bar)
    if k < 1:
        raise BoundError(f"threshold below the mean step: k = {k} < 1")
    alpha = A * gamma ** 2 / B ** 2
    radius = 2.0 * gamma + math.sqrt(gamma * B / A)
    return TrackingParameters(k, alpha, radius, gamma=gamma, c=c)


def opt_distance_bound(delta: float, A: float, B: float) -> float:
    """Bound on the distance between maximizers over regions ``delta`` apart."""
    if delta < 0:
        raise BoundError("delta must be >= 0")
    _pos(A=A, B=B)
    return math.sqrt(delta) * (math.sqrt(delta) + math.sqrt(B / A))


def gap_bound_variation(delta: float, sigma_h2: float, A: float, B: float,
                        u_star: float) -> float:
    """Greedy-vs-optimal utility gap bound driven by channel variation.

    The probability weight ``sigma_h2/delta**2`` is capped at 1.
    """
    if sigma_h2 < 0 or u_star < 0:
        raise BoundError("sigma_h2 and u_star must be >= 0")
    if not delta > 0 or delta < sigma_h2:
        raise BoundError(f"delta must be positive and >= sigma_h2, got {delta}")
    _pos(A=A, B=B)
    q = min(1.0, sigma_h2 / delta ** 2)
    return q * u_star + (1.0 - q) * B * (math.sqrt(delta) + math.sqrt(B / A)) * math.sqrt(delta)


def gap_bound_curvature(eps: float, omega: float, r_eps: float, u_star: float) -> float:
    """Greedy-vs-optimal utility gap bound driven by utility curvature."""
    if not 0 < eps <= 1:
        raise BoundError("eps must lie in (0, 1]")
    if omega < 0 or r_eps < 0 or u_star < 0:
        raise BoundError("omega, r_eps and u_star must be >= 0")
    return eps * u_star + 0.5 * (1.0 - eps) * r_eps ** 2 * omega


def _interference_term(h, p, noise):
    q = h * p / noise
    tot = q.sum(axis=-1, keepdims=True)
    return 0.5 * (np.log1p(q) + np.log1p(tot - q) - np.log1p(tot))


def r_epsilon(eps: float, sigma_h: float, process, powers, noise: float = 1.0,
              n_samples: Optional[int] = None, seed=0) -> float:
    """Radius of the ball holding the per-state optimum with probability
    ``1 - eps``. The expectation is exact over the joint stationary law when
    ``n_samples`` is None, otherwise a Monte-Carlo mean."""
    if not 0 < eps <= 1:
        raise BoundError("eps must lie in (0, 1]")
    p = np.asarray(powers, dtype=float)
    if n_samples is None:
        states, probs = process.joint_stationary()
        e = probs @ _interference_term(states, p, noise)
    else:
        e = _interference_term(process.sample_stationary(n_samples, seed), p, noise).mean(axis=0)
    return math.sqrt(process.m) * sigma_h / math.sqrt(eps) + float(np.linalg.norm(e))


def curvature_bound(u: UtilityModel, center, radius: float) -> float:
    """``sup lambda_max(-Hessian u)`` over the ball around ``center``
    (exact for alpha-fair utilities; their Hessian is diagonal)."""
    if u.kind != "alpha_fair":
        raise BoundError("curvature bound only implemented for alpha-fair utilities")
    if u.alpha == 0:
        return 0.0
    lo = np.maximum(np.asarray(center, dtype=float) - radius, u.r_min)
    return float(np.max(u.alpha * u.w * lo ** (-u.alpha - 1.0)))


@dataclass(frozen=True)
class UtilityConstants:
    A: float
    B: float
    Omega: float
    n_points: int
    n_pairs: int
    degenerate: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _face_samples(region, rng, n):
    """Random dominant-face points (mixtures of greedy vertices)."""
    m = region.m
    verts = np.array([vertex_for_order(region, rng.permutation(m)) for _ in range(max(m, 4))])
    wts = rng.dirichlet(np.ones(verts.shape[0]), size=n)
    return wts @ verts


def estimate_utility_constants(u: UtilityModel, regions, n_samples: int = 200,
                               seed=0) -> UtilityConstants:
    """Empirical ``A``, ``B`` and ``Omega`` over a family of regions.

    ``B`` is the largest gradient norm at sampled dominant-face points,
    ``A`` the smallest ``|u(R+) - u(R)| / |R+ - R|^2`` over sampled feasible
    ``R`` (face points, shrunk face points and points near the maximizer
    ``R+``), and ``Omega`` the largest ``lambda_max(-Hessian)`` at the sampled
    face points. Sampled constants are estimates, not certificates.
    """
    if n_samples < 1:
        raise BoundError("sample budget must be >= 1")
    rng = np.random.default_rng(seed)
    A = np.inf
    B = 0.0
    omega = 0.0
    n_pts = n_pairs = 0
    for reg in regions:
        best = gradient_projection_solve(reg, u).point
        ub = u.value(best)
        face = _face_samples(reg, rng, n_samples)
        n_pts += face.shape[0]
        B = max(B, float(np.max(np.linalg.norm([u.gradient(x) for x in face], axis=1))))
        if u.kind == "alpha_fair":
            omega = max(omega, max(curvature_bound(u, x, 0.0) for x in face))
        shrink = face * rng.uniform(0.0, 1.0, size=(face.shape[0], 1))
        near = best + (face - best) * rng.uniform(0.0, 0.05, size=(face.shape[0], 1))
        for R in np.vstack([face, shrink, near]):
            d2 = float(np.sum((R - best) ** 2))
            if d2 < 1e-16:
                continue
            A = min(A, abs(ub - u.value(R)) / d2)
            n_pairs += 1
    if not np.isfinite(A):
        A = 0.0
    return UtilityConstants(float(A), float(B), float(omega), n_pts, n_pairs,
                            bool(A <= 1e-9 or omega == 0.0))


@dataclass(frozen=True)
class GreedyGap:
    """Exact stationary quantities for the greedy policy on an enumerable chain."""

    r_star: np.ndarray
    u_star: float
    mean_greedy_rate: np.ndarray
    u_of_mean: float
    mean_utility: float

    @property
    def gap(self) -> float:
        return self.u_star - self.u_of_mean


def greedy_gap(process, powers, noise: float, u: UtilityModel) -> GreedyGap:
    """``u(R*)`` over the averaged region versus the greedy policy's
    stationary mean rate, both by exact enumeration of channel states."""
    p = np.asarray(powers, dtype=float)
    states, probs = process.joint_stationary()
    ca = averaged_region_exact(process, p, noise)
    r_star = (brute_force_optimum(ca, u) if process.m <= 3
              else gradient_projection_solve(ca, u).point)
    rates = np.array([gradient_projection_solve(GaussianMacRegion(p, h, noise), u).point
                      for h in states])
    mean_rate = probs @ rates
    mean_u = float(probs @ np.array([u.value(r) for r in rates]))
    return GreedyGap(r_star, u.value(r_star), mean_rate, u.value(mean_rate), mean_u)


@dataclass(frozen=True)
class BoundReport:
    sigma_h2: float
    w_hat: float
    w_bar: float
    u_star: float
    best_delta: float
    variation_bound: float
    best_eps: float
    curvature_bound: float
    r_eps: float
    omega: float

    @property
    def gap_bound(self) -> float:
        return min(self.variation_bound, self.curvature_bound)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["gap_bound"] = self.gap_bound
        return d


def delta_grid(sigma_h2: float, n: int = 200, hi: float = 10.0) -> np.ndarray:
    lo = max(sigma_h2, 1e-8)
    return np.geomspace(lo, max(hi, 10.0 * lo), n)


def optimize_bounds(process, powers, noise: float, u: UtilityModel, A: float, B: float,
                    r_star, n_grid: int = 200) -> BoundReport:
    """Both gap bounds minimized over their free parameter on a grid.

    ``r_star`` is the utility maximizer over the averaged region; the
    curvature bound is taken over the ``r(eps)`` ball around it.
    """
    p = np.asarray(powers, dtype=float)
    r_star = np.asarray(r_star, dtype=float)
    u_star = u.value(r_star)
    stats = step_statistics(process, p)
    s2 = sigma_H_squared(stats, p, noise)
    deltas = delta_grid(s2, n_grid)
    vb = [gap_bound_variation(d, s2, A, B, u_star) for d in deltas]
    j = int(np.argmin(vb))
    best = (np.inf, None, None, None)
    for eps in np.linspace(1.0 / n_grid, 1.0, n_grid):
        r = r_epsilon(eps, math.sqrt(s2), process, p, noise)
        om = curvature_bound(u, r_star, r)
        val = gap_bound_curvature(eps, om, r, u_star)
        if val < best[0]:
            best = (val, eps, r, om)
    return BoundReport(s2, stats.w_hat, stats.w_bar, u_star, float(deltas[j]), float(vb[j]),
                       float(best[1]), float(best[0]), float(best[2]), float(best[3]))
