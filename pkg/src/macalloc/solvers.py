"""Static rate allocation: gradient projection, conditional gradient and a
grid-search reference optimizer."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import nnls

from . import _kernels
from .projection import approximate_project, count_violations
from .region import (MAX_ENUM_USERS, GaussianMacRegion, RegionError,
                     is_feasible, linear_maximize, rank_table)
from .utility import UtilityDomainError, UtilityModel

WINDOW = 20
GOLDEN_EVALS = 40
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class SolverError(RuntimeError):
    pass


def safe_stepsize(powers, noise: float, B: float, M: Optional[int] = None) -> float:
    """Constant stepsize keeping every unprojected iterate within M violated
    constraints. ``powers`` are effective (gain-scaled) powers."""
    p = np.sort(np.asarray(powers, dtype=float))
    m = p.shape[0] if M is None else int(M)
    if m != p.shape[0]:
        raise RegionError("M does not match the number of powers")
    if m < 2:
        raise RegionError("safe stepsize needs at least two users")
    if not B > 0:
        raise RegionError("B must be positive")
    rest = float(p[2:].sum())
    gap = math.log1p(p[0] * p[1] / ((noise + rest) * (noise + float(p.sum()))))
    return gap / (4.0 * B * math.sqrt(m))


@dataclass(frozen=True)
class StepsizeRule:
    """``constant``, ``diminishing`` (a/(k+1)), ``safe`` or ``backtracking``.

    ``backtracking`` steps along the gradient projected onto the tangent cone
    of the constraints tight at the current point. It starts at ``value``,
    halves until a sufficient-increase test passes, keeps halving while the
    shorter step does better, and doubles again after every accepted step.
    """

    kind: str = "backtracking"
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "diminishing", "safe", "backtracking"):
            raise ValueError(f"unknown stepsize rule {self.kind!r}")
        if self.kind != "safe" and not self.value > 0:
            raise ValueError("stepsize must be strictly positive")

    @classmethod
    def constant(cls, a):
        return cls("constant", float(a))

    @classmethod
    def diminishing(cls, a):
        return cls("diminishing", float(a))

    @classmethod
    def safe(cls):
        return cls("safe", 0.0)

    def resolve(self, region, u: UtilityModel) -> "StepsizeRule":
        """Replace ``safe`` by the constant it evaluates to for ``region``."""
        if self.kind != "safe":
            return self
        if not isinstance(region, GaussianMacRegion) or region.m < 2:
            warnings.warn("safe stepsize unavailable here; using constant 0.1")
            return StepsizeRule.constant(0.1)
        return StepsizeRule.constant(
            safe_stepsize(region.effective_powers, region.noise, u.B))

    def at(self, k: int) -> float:
        if self.kind == "diminishing":
            return self.value / (k + 1)
        return self.value


@dataclass
class SolveReport:
    point: np.ndarray
    utilities: list
    iterations: int
    violations: list
    converged: bool = False
    gaps: list = field(default_factory=list)
    iterates: list = field(default_factory=list, repr=False)

    @property
    def utility(self) -> float:
        return max(self.utilities) if self.utilities else float("nan")

    def to_dict(self) -> dict:
        return {"point": self.point.tolist(), "utility": self.utility,
                "iterations": self.iterations, "converged": self.converged,
                "utilities": list(self.utilities), "violations": list(self.violations),
                "gaps": list(self.gaps)}


def default_start(region) -> np.ndarray:
    """Equal split of the full-set rank, pushed into the region."""
    y = np.full(region.m, region.full_rank / region.m)
    return approximate_project(y, region)


def _grad(u, r, k):
    try:
        return u.gradient(r)
    except UtilityDomainError as exc:
        raise UtilityDomainError(f"iteration {k}, point {r.tolist()}: {exc}") from exc


def tangent_direction(region, R, g, tol: float = 1e-10) -> np.ndarray:
    """Projection of ``g`` onto the cone of directions that keep every
    constraint tight at ``R`` satisfied (``d(S) <= 0``, ``d_i >= 0`` at 0)."""
    m = region.m
    if m > MAX_ENUM_USERS:
        return g
    t = rank_table(region)
    slack = t - _kernels.subset_sums(np.asarray(R, dtype=float))
    tight = [mask for mask in range(1, 1 << m) if slack[mask] <= tol]
    normals = [np.array([(mask >> i) & 1 for i in range(m)], dtype=float) for mask in tight]
    normals += [-np.eye(m)[i] for i in range(m) if R[i] <= tol]
    if not normals:
        return g
    N = np.array(normals).T
    lam, _ = nnls(N, g)
    return g - N @ lam


def gradient_projection_solve(region, u: UtilityModel, rule: Optional[StepsizeRule] = None,
                              start=None, max_iter: int = 5000, tol: float = 1e-12,
                              step_tol: float = 1e-12, record_violations: bool = False,
                              keep_iterates: bool = False) -> SolveReport:
    """Maximize ``u`` over ``region`` by ``R <- P~(R + a g)``.

    Stops when the best utility has gained less than ``tol`` over the last
    20 iterations, when a backtracking step ``a*g`` shrinks below
    ``step_tol`` in norm, or after ``max_iter`` iterations. The best iterate is returned.
    ``violations[k]`` counts constraints broken by the unprojected k-th step
    (only when ``record_violations``).
    """
    rule = (rule or StepsizeRule()).resolve(region, u)
    count = record_violations and region.m <= MAX_ENUM_USERS
    R = default_start(region) if start is None else approximate_project(
        np.asarray(start, dtype=float), region)
    uR = u.value(R)
    best, best_u = R, uR
    utils = [uR]
    viols = []
    iterates = [R] if keep_iterates else []
    a = rule.value
    converged = False
    k = 0
    while k < max_iter:
        g = _grad(u, R, k)
        if rule.kind == "backtracking":
            g = tangent_direction(region, R, g)
            stop = False
            while True:
                Y = R + a * g
                Rn = approximate_project(Y, region)
                d = Rn - R
                gd = float(g @ d)
                un = u.value(Rn)
                if gd > 0 and un >= uR + 1e-4 * gd:
                    break
                if a * float(np.linalg.norm(g)) < step_tol:
                    stop = True
                    break
                a *= 0.5
            if stop:
                converged = True
                break
            # the projection arc is not monotone: prefer a shorter step
            # whenever it does better
            while a * float(np.linalg.norm(g)) >= step_tol:
                Y2 = R + 0.5 * a * g
                R2 = approximate_project(Y2, region)
                u2 = u.value(R2)
                if u2 <= un:
                    break
                a, Y, Rn, un = 0.5 * a, Y2, R2, u2
            a *= 2.0
        else:
            Y = R + rule.at(k) * g
            Rn = approximate_project(Y, region)
            un = u.value(Rn)
        if count:
            viols.append(count_violations(region, Y))
        k += 1
        R, uR = Rn, un
        utils.append(uR)
        if keep_iterates:
            iterates.append(R)
        if uR > best_u:
            best, best_u = R, uR
        if k >= WINDOW and max(utils[-WINDOW:]) - max(utils[:-WINDOW]) < tol:
            converged = True
            break
    return SolveReport(best, utils, k, viols, converged, iterates=iterates)


def _oracle_from(oracle):
    if callable(oracle) and not hasattr(oracle, "rank"):
        return oracle, None
    return (lambda w: linear_maximize(oracle, w)), oracle


def golden_section_max(f: Callable[[float], float], lo: float = 0.0, hi: float = 1.0,
                       n_eval: int = GOLDEN_EVALS) -> float:
    """Maximizer of a unimodal ``f`` on ``[lo, hi]`` from ``n_eval`` calls."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(n_eval - 2):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return c if fc >= fd else d


def conditional_gradient_solve(oracle, u: UtilityModel, start=None, max_iter: int = 1000,
                               tol: float = 1e-9, keep_iterates: bool = False) -> SolveReport:
    """Frank-Wolfe with golden-section line search on ``[0, 1]``.

    ``oracle`` is a region (its greedy vertex is the linear maximizer) or any
    callable mapping a weight vector to a maximizing rate vector. Stops when
    the duality gap ``grad'(Rbar - R)`` drops below ``tol``.
    """
    if not u.differentiable:
        raise UtilityDomainError("conditional gradient needs a differentiable utility")
    lmo, region = _oracle_from(oracle)
    if start is None:
        R = default_start(region) if region is not None else np.asarray(
            lmo(np.ones(u.m)), dtype=float)
    else:
        R = np.asarray(start, dtype=float)
    uR = u.value(R)
    utils = [uR]
    gaps = []
    iterates = [R] if keep_iterates else []
    converged = False
    k = 0
    while k < max_iter:
        g = _grad(u, R, k)
        Rbar = np.asarray(lmo(g), dtype=float)
        d = Rbar - R
        gap = float(g @ d)
        gaps.append(gap)
        if gap < tol:
            converged = True
            break
        step = golden_section_max(lambda s: u.value(R + s * d))
        un = u.value(R + step * d)
        if u.value(Rbar) > un:
            step, un = 1.0, u.value(Rbar)
        k += 1
        if un <= uR:
            # line search cannot improve any more
            converged = True
            break
        R, uR = R + step * d, un
        utils.append(uR)
        if keep_iterates:
            iterates.append(R)
    return SolveReport(R, utils, k, [], converged, gaps, iterates)


def _face_interval_2(t):
    # M=2 dominant face: r0 in [f(01) - f(1), f(0)], r1 = f(01) - r0
    return t[3] - t[2], t[1]


def brute_force_optimum(region, u: UtilityModel, grid_n: Optional[int] = None) -> np.ndarray:
    """Reference maximizer over the dominant face (M <= 3) by grid search
    plus local refinement. Valid for utilities nondecreasing in each rate."""
    m = region.m
    if m > 3:
        raise RegionError("brute force limited to M <= 3")
    t = np.asarray(rank_table(region), dtype=float)
    if m == 1:
        return np.array([t[1]])
    if m == 2:
        n = grid_n or 2000
        lo, hi = _face_interval_2(t)
        xs = np.linspace(lo, hi, n)
        vals = [u.value(np.array([x, t[3] - x])) for x in xs]
        j = int(np.argmax(vals))
        a, b = xs[max(j - 1, 0)], xs[min(j + 1, n - 1)]
        x = golden_section_max(lambda s: u.value(np.array([s, t[3] - s])), a, b, 80)
        return np.array([x, t[3] - x])
    return _brute_force_3(t, u, grid_n or 300)


def _face_bounds_3(t, r1):
    """Feasible range of r0 on the M=3 dominant face given r1."""
    s = t[7]
    lo = max(s - t[6], s - r1 - t[4], 0.0)
    hi = min(t[1], t[3] - r1, s - r1)
    return lo, hi


def _brute_force_3(t, u, n):
    s = t[7]
    best, best_v = None, -np.inf
    for r1 in np.linspace(max(0.0, s - t[5]), t[2], n):
        lo, hi = _face_bounds_3(t, r1)
        if hi < lo:
            continue
        for r0 in np.linspace(lo, hi, n):
            r = np.array([r0, r1, s - r0 - r1])
            v = u.value(r)
            if v > best_v:
                best, best_v = r, v
    if best is None:
        raise SolverError("empty dominant face")
    # coordinate refinement along face directions (move r0 or r1 against r2)
    r = best
    for _ in range(60):
        moved = False
        lo, hi = _face_bounds_3(t, r[1])
        r0 = golden_section_max(lambda x: u.value(np.array([x, r[1], s - x - r[1]])),
                                lo, hi, 60)
        cand = np.array([r0, r[1], s - r0 - r[1]])
        if u.value(cand) > u.value(r) + 1e-15:
            r, moved = cand, True
        # swap roles of users 0 and 1 by symmetry of the face description
        lo1 = max(s - t[5], s - r[0] - t[4], 0.0)
        hi1 = min(t[2], t[3] - r[0], s - r[0])
        r1 = golden_section_max(lambda x: u.value(np.array([r[0], x, s - r[0] - x])),
                                lo1, hi1, 60)
        cand = np.array([r[0], r1, s - r[0] - r1])
        if u.value(cand) > u.value(r) + 1e-15:
            r, moved = cand, True
        if not moved:
            break
    return r
