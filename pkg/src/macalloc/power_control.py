"""Joint rate and power allocation under average power budgets.

For fixed weights ``mu`` and prices ``lam`` the per-state problem
``max mu'r - lam'p`` is solved exactly by a greedy sweep over interference
levels. Prices are fitted by Monte-Carlo so that the average power meets the
budget, which traces the boundary of the power-controlled average region.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from .region import RegionError
from .solvers import SolveReport, conditional_gradient_solve

log = logging.getLogger(__name__)


class PowerControlError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


def _vec(x, m, name):
    a = np.ascontiguousarray(np.broadcast_to(np.asarray(x, dtype=float), (m,)))
    if not np.all(np.isfinite(a)):
        raise RegionError(f"{name} must be finite")
    return a


def tse_rate_power_step(h, mu, lam, noise: float = 1.0):
    """Optimal ``(rates, powers)`` for ``max mu'r - lam'p`` at gains ``h``."""
    h = np.ascontiguousarray(h, dtype=float)
    m = h.shape[0]
    mu = _vec(mu, m, "mu")
    lam = _vec(lam, m, "lambda")
    if np.any(mu < 0) or np.any(h < 0):
        raise RegionError("mu and gains must be nonnegative")
    if np.any(lam <= 0):
        raise RegionError("every price must be positive (zero gives unbounded power)")
    if not noise > 0:
        raise RegionError("noise must be positive")
    p, r = _kernels.tse_envelope(h, mu, lam, float(noise))
    return r, p


def tse_objective(h, mu, lam, noise: float = 1.0) -> float:
    r, p = tse_rate_power_step(h, mu, lam, noise)
    return float(np.dot(mu, r) - np.dot(lam, p))


@dataclass(frozen=True)
class LagrangeMultipliers:
    lam: np.ndarray
    avg_power: np.ndarray
    avg_rate: np.ndarray
    iterations: int


def _initial_lambda(mu, pbar, hbar, noise):
    # single-user water-filling price at the mean gain
    hb = np.where(hbar > 0, hbar, 1.0)
    return np.maximum(mu, 1e-12) / (2.0 * (pbar + noise / hb))


def _dual(H, mu, pbar, noise):
    """Dual function ``E[max mu'r - lam'p] + lam'pbar`` and its gradient."""
    def f(lam):
        P, R = _kernels.tse_batch(H, mu, lam, noise)
        avg_p = P.mean(axis=0)
        val = float(mu @ R.mean(axis=0) - lam @ avg_p + lam @ pbar)
        return val, pbar - avg_p
    return f


def find_lambda(process, mu, pbar, noise: float = 1.0, n_samples: int = 2000, seed=0,
                tol: float = 1e-4, max_iter: int = 200, eta: float = 0.5,
                lam0=None, samples=None, strict: bool = True) -> LagrangeMultipliers:
    """Prices making the sample-average power equal ``pbar`` per user.

    The gain samples are drawn once (common random numbers). First the
    update ``lam_i <- lam_i * (avg_p_i / pbar_i)**eta`` is iterated; a
    user's exponent shrinks whenever its residual changes sign. If that has
    not brought every relative residual below ``tol`` after ``max_iter``
    steps, the convex dual is minimized directly (its gradient is the
    budget residual). Users with ``mu_i = 0`` transmit nothing and are left
    out. With a discrete gain law the average power can jump in ``lam``;
    then ``strict=False`` returns the best point found instead of raising.
    """
    m = process.m
    mu = _vec(mu, m, "mu")
    pbar = _vec(pbar, m, "pbar")
    if np.any(pbar <= 0):
        raise RegionError("power budgets must be positive")
    if np.any(mu < 0):
        raise RegionError("mu must be nonnegative")
    H = (np.ascontiguousarray(samples, dtype=float) if samples is not None
         else np.ascontiguousarray(process.sample_stationary(n_samples, seed)))
    noise = float(noise)
    active = mu > 0
    lam = (_initial_lambda(mu, pbar, process.mean, noise) if lam0 is None
           else np.array(lam0, dtype=float))
    best = None
    n_eval = 0

    def evaluate(lam):
        nonlocal best, n_eval
        n_eval += 1
        P, R = _kernels.tse_batch(H, mu, lam, noise)
        avg_p = P.mean(axis=0)
        rel = np.abs(avg_p - pbar) / pbar
        worst = float(rel[active].max()) if active.any() else 0.0
        if best is None or worst < best[0]:
            best = (worst, LagrangeMultipliers(lam.copy(), avg_p, R.mean(axis=0), n_eval))
        return avg_p, worst

    e = np.full(m, float(eta))
    last = np.zeros(m)
    for _ in range(max_iter):
        avg_p, worst = evaluate(lam)
        if worst <= tol:
            return best[1]
        sign = np.sign(avg_p - pbar)
        e = np.where(sign * last < 0, np.maximum(0.7 * e, 0.01), e)
        last = sign
        ratio = np.where(avg_p > 0, avg_p / pbar, 0.5)
        lam = np.where(active, lam * ratio ** e, lam)

    idx = np.nonzero(active)[0]
    dual = _dual(H, mu, pbar, noise)
    scale = best[1].lam[idx].copy()

    def obj(y):
        full = lam_fixed.copy()
        full[idx] = y * scale
        val, grad = dual(full)
        evaluate(full)
        return val, grad[idx] * scale

    lam_fixed = best[1].lam.copy()
    minimize(obj, np.ones(idx.shape[0]), jac=True, method="L-BFGS-B",
             bounds=[(1e-9, None)] * idx.shape[0],
             options={"maxiter": 500, "ftol": 0.0, "gtol": 1e-12 * float(pbar.max())})
    if best[0] <= tol:
        return best[1]
    if not strict:
        log.warning("price fit stopped at relative residual %.3g", best[0])
        return best[1]
    raise PowerControlError(
        f"price fit did not reach tolerance {tol} (best relative residual {best[0]:.3g})",
        best[0])


def boundary_point(process, mu, pbar, noise: float = 1.0, n_samples: int = 2000,
                   seed=0, **kw) -> np.ndarray:
    """Average rate vector maximizing ``mu'R`` under the power budgets."""
    return find_lambda(process, mu, pbar, noise, n_samples, seed, **kw).avg_rate


@dataclass(frozen=True)
class PowerControlSolution:
    rates: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    report: SolveReport


def section4_solve(process, u, pbar, noise: float = 1.0, n_samples: int = 2000, seed=0,
                   max_iter: int = 200, tol: float = 1e-7) -> PowerControlSolution:
    """Utility-optimal average rates with power control.

    Conditional gradient over the average region, where each linear
    subproblem is a fitted boundary point. Returns the target rates and the
    weights ``mu* = grad u(R*)`` to use per slot afterwards.
    """
    H = np.ascontiguousarray(process.sample_stationary(n_samples, seed))
    last = {}

    def oracle(w):
        w = np.asarray(w, dtype=float)
        lam0 = None
        if "lam" in last:
            # prices scale with the weights; reuse the last fit as a start
            lam0 = last["lam"] * (w.sum() / last["w"].sum())
        sol = find_lambda(process, w, pbar, noise, samples=H, lam0=lam0, tol=1e-6,
                          strict=False)
        last["lam"], last["w"] = sol.lam, w
        return sol.avg_rate

    rep = conditional_gradient_solve(oracle, u, max_iter=max_iter, tol=tol)
    mu = u.gradient(rep.point)
    lam = find_lambda(process, mu, pbar, noise, samples=H, tol=1e-6, strict=False).lam
    return PowerControlSolution(rep.point, mu, lam, rep)
