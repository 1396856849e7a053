"""Approximate projection onto MAC capacity regions.

A point is pushed into the region by successively projecting onto violated
sum-rate constraints. Violated constraints come from a rate-splitting
procedure for Gaussian regions (no subset enumeration) or from exhaustive
enumeration for table-backed regions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .region import (FEAS_TOL, GaussianMacRegion, RegionError, as_mask,
                     mask_to_users, rank_table)

SPLIT_TOL = 1e-12


@dataclass(frozen=True)
class Configuration:
    """Current (possibly merged) users: powers, rates and member sets."""

    powers: np.ndarray
    rates: np.ndarray
    noise: float
    members: tuple

    @classmethod
    def initial(cls, powers, rates, noise):
        p = np.asarray(powers, dtype=float)
        return cls(p, np.asarray(rates, dtype=float), float(noise),
                   tuple((i,) for i in range(p.shape[0])))

    def merge(self, a: int, b: int) -> "Configuration":
        keep, drop = min(a, b), max(a, b)
        p = self.powers.copy()
        r = self.rates.copy()
        p[keep] += p[drop]
        r[keep] += r[drop]
        members = list(self.members)
        members[keep] = tuple(sorted(members[keep] + members[drop]))
        del members[drop]
        return Configuration(np.delete(p, drop), np.delete(r, drop), self.noise,
                             tuple(members))


def elevation_of(config: Configuration) -> np.ndarray:
    """Extra Gaussian interference each user tolerates at its rate.

    Zero-rate users get ``+inf``; a negative entry means the user (or
    hyper-user) exceeds its interference-free capacity.
    """
    p = np.asarray(config.powers, dtype=float)
    r = np.asarray(config.rates, dtype=float)
    if np.any(p <= 0):
        raise RegionError("elevation needs strictly positive powers")
    out = np.full(p.shape, np.inf)
    pos = r > 0
    out[pos] = p[pos] / np.expm1(2.0 * r[pos]) - config.noise
    return out


@dataclass(frozen=True)
class SpinoffResult:
    """Outcome of the rate-splitting check.

    ``codable`` is True when the rates admit a single-user-codable spin-off.
    Then ``order`` lists users in successive-decoding order and ``groups``
    the merged hyper-users in that order. Otherwise ``violated`` is a subset
    whose sum rate exceeds its capacity.
    """

    codable: bool
    order: tuple = ()
    groups: tuple = ()
    violated: tuple = ()

    def to_dict(self) -> dict:
        if self.codable:
            return {"verdict": "single_user_codable",
                    "decoding_order": list(self.order),
                    "groups": [list(g) for g in self.groups]}
        return {"verdict": "violated", "subset": list(self.violated)}


def rate_split_check(powers, rates, gains=None, noise=1.0,
                     tol: float = SPLIT_TOL) -> SpinoffResult:
    p = np.asarray(powers, dtype=float)
    r = np.asarray(rates, dtype=float)
    h = np.ones_like(p) if gains is None else np.asarray(gains, dtype=float)
    if p.shape != r.shape or h.shape != p.shape:
        raise RegionError("powers, rates and gains must have equal length")
    if np.any(r < 0) or np.any(p < 0) or np.any(h < 0) or noise <= 0:
        raise RegionError("rates, powers and gains must be nonnegative")
    q = np.ascontiguousarray(p * h)
    status, label, order = _kernels.rate_split(q, np.ascontiguousarray(r),
                                               float(noise), tol)
    if status == _kernels.VIOLATED:
        g = label[order[0]]
        return SpinoffResult(False, violated=tuple(int(i) for i in np.nonzero(label == g)[0]))
    order = tuple(int(i) for i in order)
    groups = []
    for i in order:
        lab = label[i]
        if lab < 0:
            groups.append((i,))
        elif not groups or label[groups[-1][0]] != lab:
            groups.append((i,))
        else:
            groups[-1] = groups[-1] + (i,)
    return SpinoffResult(True, order, tuple(groups))


def find_violated(region, r, tol: float = SPLIT_TOL) -> Optional[tuple]:
    """Some violated subset of users, or None when ``r`` is feasible.

    Gaussian regions use rate splitting; other regions use the exhaustive
    most-violated search.
    """
    r = np.maximum(np.asarray(r, dtype=float), 0.0)
    if isinstance(region, GaussianMacRegion):
        res = rate_split_check(region.powers, r, region.gains, region.noise, tol)
        return None if res.codable else res.violated
    return most_violated_subset(region, r, tol)


def most_violated_subset(region, r, tol: float = SPLIT_TOL) -> Optional[tuple]:
    mask = _kernels.most_violated(rank_table(region), np.asarray(r, dtype=float), tol)
    return None if mask < 0 else mask_to_users(int(mask))


def project_onto_constraint(y, S, b: float) -> np.ndarray:
    """Orthogonal projection onto the hyperplane ``sum_{i in S} x_i = b``."""
    y = np.asarray(y, dtype=float)
    idx = list(mask_to_users(as_mask(S, y.shape[0])))
    if not idx:
        raise RegionError("cannot project onto the empty constraint")
    out = y.copy()
    out[idx] -= (y[idx].sum() - b) / len(idx)
    return out


@dataclass(frozen=True)
class Projection:
    point: np.ndarray
    projected: tuple


def approximate_project_trace(y, region, tol: float = SPLIT_TOL,
                              max_proj: Optional[int] = None) -> Projection:
    """Approximate projection plus the sequence of subsets projected on.

    Negative coordinates are clamped to 0 first. Each step projects onto
    ``{x >= 0: sum_S x <= rank(S)}``, which equals the hyperplane projection
    unless a coordinate would turn negative. Coordinates only decrease, so
    a constraint made tight is never violated again and the loop visits each
    subset at most once.
    """
    y = np.ascontiguousarray(y, dtype=float)
    if y.shape != (region.m,):
        raise RegionError(f"point must have length {region.m}")
    if max_proj is None:
        max_proj = (1 << min(region.m, 16)) + region.m
    if isinstance(region, GaussianMacRegion):
        q = np.ascontiguousarray(region.effective_powers)
        x, sets, k = _kernels.approx_project_split(y, q, region.noise, tol, max_proj)
        projected = tuple(tuple(int(i) for i in np.nonzero(s)[0]) for s in sets[:k])
    else:
        x, masks, k = _kernels.approx_project_table(y, np.ascontiguousarray(rank_table(region)),
                                                    tol, max_proj)
        projected = tuple(mask_to_users(int(mk)) for mk in masks[:k])
    if k == max_proj:
        raise RegionError("approximate projection did not terminate")
    return Projection(x, projected)


def approximate_project(y, region, tol: float = SPLIT_TOL) -> np.ndarray:
    return approximate_project_trace(y, region, tol).point


def count_violations(region, y, tol: float = FEAS_TOL) -> int:
    """Number of violated sum-rate constraints, by exhaustive enumeration."""
    return int(_kernels.count_violated(np.ascontiguousarray(rank_table(region)),
                                       np.ascontiguousarray(y, dtype=float), tol))
