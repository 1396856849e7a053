"""Gaussian multiple-access capacity regions as polymatroids.

A region is anything exposing ``m`` (number of users) and ``rank(S)``, the
capacity bound on the sum rate of subset ``S``. Subsets are given either as
an int bitmask or as an iterable of 0-based user indices. All rates are in
nats per channel use.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Union

import numpy as np

from . import _kernels

MAX_ENUM_USERS = 20
FEAS_TOL = 1e-9

Subset = Union[int, Iterable[int]]


class RegionError(ValueError):
    pass


def as_mask(S: Subset, m: int) -> int:
    if isinstance(S, (int, np.integer)):
        mask = int(S)
        if mask < 0 or mask >= (1 << m):
            raise RegionError(f"subset mask {mask} out of range for M={m}")
        return mask
    mask = 0
    for i in S:
        i = int(i)
        if not 0 <= i < m:
            raise RegionError(f"user index {i} out of range for M={m}")
        mask |= 1 << i
    return mask


def mask_to_users(mask: int) -> tuple:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def _check_enum(m: int):
    if m > MAX_ENUM_USERS:
        raise RegionError(
            f"M={m} exceeds the subset-enumeration guard ({MAX_ENUM_USERS})")


def awgn_capacity(power, noise):
    """Capacity of an AWGN channel, ``0.5 * ln(1 + power/noise)`` nats."""
    power = float(power)
    noise = float(noise)
    if not (math.isfinite(power) and math.isfinite(noise)):
        raise RegionError("power and noise must be finite")
    if power < 0 or noise <= 0:
        raise RegionError("need power >= 0 and noise > 0")
    return 0.5 * math.log1p(power / noise)


def _as_vector(x, name, positive=False):
    a = np.array(x, dtype=float).ravel()
    if a.size < 1:
        raise RegionError(f"{name} must have at least one entry")
    if not np.all(np.isfinite(a)):
        raise RegionError(f"{name} must be finite")
    if positive and np.any(a <= 0):
        raise RegionError(f"{name} must be strictly positive")
    if not positive and np.any(a < 0):
        raise RegionError(f"{name} must be nonnegative")
    a.setflags(write=False)
    return a


class _TableRegion:
    """Shared behaviour for regions backed by a ``2**M`` rank table."""

    m: int

    def rank(self, S: Subset) -> float:
        return float(self.rank_table[as_mask(S, self.m)])

    @property
    def full_rank(self) -> float:
        return self.rank((1 << self.m) - 1)


@dataclass(frozen=True, eq=False)
class GaussianMacRegion(_TableRegion):
    """``C_g(P, H)``: rank(S) = C(sum_{i in S} h_i p_i, N0)."""

    powers: np.ndarray
    gains: np.ndarray = None
    noise: float = 1.0

    def __post_init__(self):
        p = _as_vector(self.powers, "powers", positive=True)
        h = np.ones_like(p) if self.gains is None else _as_vector(self.gains, "gains")
        if h.shape != p.shape:
            raise RegionError("powers and gains must have equal length")
        if not (math.isfinite(self.noise) and self.noise > 0):
            raise RegionError("noise must be positive")
        object.__setattr__(self, "powers", p)
        object.__setattr__(self, "gains", h)
        object.__setattr__(self, "noise", float(self.noise))

    @property
    def m(self) -> int:
        return self.powers.shape[0]

    @cached_property
    def effective_powers(self) -> np.ndarray:
        q = self.powers * self.gains
        q.setflags(write=False)
        return q

    def rank(self, S: Subset) -> float:
        mask = as_mask(S, self.m)
        if self.m > MAX_ENUM_USERS:
            tot = float(self.effective_powers[list(mask_to_users(mask))].sum())
            return 0.5 * math.log1p(tot / self.noise)
        return float(self.rank_table[mask])

    @cached_property
    def rank_table(self) -> np.ndarray:
        _check_enum(self.m)
        t = _kernels.gaussian_rank_table(self.effective_powers, self.noise)
        t.setflags(write=False)
        return t

    def to_dict(self) -> dict:
        return {"powers": self.powers.tolist(), "gains": self.gains.tolist(),
                "noise": self.noise}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMacRegion":
        return cls(d["powers"], d.get("gains"), d.get("noise", 1.0))

    @classmethod
    def from_json(cls, text: str) -> "GaussianMacRegion":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class AveragedRegion(_TableRegion):
    """``C_a(P)``: per-subset rank averaged over channel states."""

    powers: np.ndarray
    noise: float
    table: np.ndarray
    n_samples: int = 0
    # per-subset standard error of the table (zeros when computed exactly)
    stderr: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        p = _as_vector(self.powers, "powers", positive=True)
        t = np.array(self.table, dtype=float)
        if t.shape != (1 << p.shape[0],):
            raise RegionError("rank table must have 2**M entries")
        if t[0] != 0.0:
            raise RegionError("rank of the empty set must be 0")
        t.setflags(write=False)
        se = np.zeros_like(t) if self.stderr is None else np.asarray(self.stderr, float)
        object.__setattr__(self, "powers", p)
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "stderr", se)

    @property
    def m(self) -> int:
        return self.powers.shape[0]

    @property
    def rank_table(self) -> np.ndarray:
        return self.table


@dataclass(frozen=True, eq=False)
class ExpandedRegion(_TableRegion):
    """Every nonempty constraint of ``base`` relaxed by ``delta``."""

    base: object
    delta: float

    @property
    def m(self) -> int:
        return self.base.m

    @cached_property
    def rank_table(self) -> np.ndarray:
        t = np.array(rank_table(self.base), dtype=float)
        t[1:] += self.delta
        t.setflags(write=False)
        return t


def rank(region, S: Subset) -> float:
    return region.rank(S)


def rank_table(region) -> np.ndarray:
    """The full ``2**M`` table of ranks, indexed by bitmask."""
    _check_enum(region.m)
    t = getattr(region, "rank_table", None)
    if t is not None:
        return t
    return np.array([region.rank(mask) for mask in range(1 << region.m)])


def feasibility_report(region, r, tol: float = FEAS_TOL) -> list:
    """Every violated subset as ``(users, slack)`` with slack = r(S) - rank(S).

    An empty list means ``r`` is feasible (nonnegativity is checked too; a
    negative coordinate is reported as ``((i,), r_i)`` with negative slack).
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (region.m,):
        raise RegionError(f"rate vector must have length {region.m}")
    out = [((i,), float(r[i])) for i in range(region.m) if r[i] < -tol]
    table = rank_table(region)
    excess = _kernels.subset_sums(r) - table
    for mask in np.nonzero(excess > tol)[0]:
        if mask:
            out.append((mask_to_users(int(mask)), float(excess[mask])))
    return out


def is_feasible(region, r, tol: float = FEAS_TOL) -> bool:
    return not feasibility_report(region, r, tol)


def on_dominant_face(region, r, tol: float = FEAS_TOL) -> bool:
    if not is_feasible(region, r, tol):
        raise RegionError("rate vector is not feasible")
    full = region.rank((1 << region.m) - 1)
    return abs(float(np.sum(r)) - full) <= tol


def greedy_order(weights) -> np.ndarray:
    """Users by descending weight; ties by ascending index."""
    w = np.asarray(weights, dtype=float)
    return np.lexsort((np.arange(w.shape[0]), -w))


def linear_maximize(region, weights) -> np.ndarray:
    """Polymatroid greedy vertex maximizing ``weights . r`` over the region.

    Zero-weight users get rate 0; positive-weight users are stacked in
    descending weight order with successive rank increments.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != (region.m,):
        raise RegionError(f"weights must have length {region.m}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise RegionError("weights must be finite and nonnegative")
    r = np.zeros(region.m)
    mask = 0
    prev = 0.0
    for i in greedy_order(w):
        if w[i] <= 0:
            break
        mask |= 1 << int(i)
        cur = region.rank(mask)
        r[i] = cur - prev
        prev = cur
    return r


def vertex_for_order(region, order) -> np.ndarray:
    r = np.zeros(region.m)
    mask = 0
    prev = 0.0
    for i in order:
        mask |= 1 << int(i)
        cur = region.rank(mask)
        r[int(i)] = cur - prev
        prev = cur
    return r


def expand(region, delta: float) -> ExpandedRegion:
    if not delta >= 0:
        raise RegionError("expansion must be nonnegative")
    return ExpandedRegion(region, float(delta))


def region_distance(a, b) -> float:
    """Smallest uniform relaxation making each region contain the other."""
    if a.m != b.m:
        raise RegionError("regions have different dimensions")
    ta = rank_table(a)
    tb = rank_table(b)
    return float(np.max(np.abs(ta[1:] - tb[1:])))


def estimate_averaged_region(process, powers, noise: float, n_samples: int,
                             seed) -> AveragedRegion:
    """Monte-Carlo ``C_a(P)`` from stationary draws of ``process``.

    Each user's draws come from its own stream spawned from ``seed``, so the
    table does not depend on evaluation order.
    """
    if n_samples < 1:
        raise RegionError("n_samples must be >= 1")
    p = _as_vector(powers, "powers", positive=True)
    if p.shape[0] != process.m:
        raise RegionError("powers length does not match the process")
    _check_enum(process.m)
    h = process.sample_stationary(n_samples, seed)
    q = np.ascontiguousarray(h * p)
    table = _kernels.mc_rank_table(q, float(noise))
    if n_samples > 1:
        sq = np.zeros_like(table)
        for k in range(n_samples):
            sq += (_kernels.gaussian_rank_table(q[k], float(noise)) - table) ** 2
        stderr = np.sqrt(sq / (n_samples - 1) / n_samples)
    else:
        stderr = np.full_like(table, np.inf)
        stderr[0] = 0.0
    table[0] = 0.0
    return AveragedRegion(p, float(noise), table, n_samples, stderr)


def averaged_region_exact(process, powers, noise: float) -> AveragedRegion:
    """``C_a(P)`` by exact enumeration of the joint stationary distribution."""
    p = _as_vector(powers, "powers", positive=True)
    _check_enum(process.m)
    states, probs = process.joint_stationary()
    table = np.zeros(1 << process.m)
    for h, w in zip(states, probs):
        table += w * _kernels.gaussian_rank_table(h * p, float(noise))
    table[0] = 0.0
    return AveragedRegion(p, float(noise), table, 0)
