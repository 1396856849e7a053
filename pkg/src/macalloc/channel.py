"""Finite-state Markov fading and channel-variation statistics."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .region import MAX_ENUM_USERS, RegionError


class ChannelError(ValueError):
    pass


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _irreducible(P: np.ndarray) -> bool:
    n = P.shape[0]
    reach = (P > 0) | np.eye(n, dtype=bool)
    for _ in range(max(1, int(math.ceil(math.log2(max(n, 2)))) + 1)):
        reach = reach | ((reach.astype(int) @ reach.astype(int)) > 0)
    return bool(reach.all())


@dataclass(frozen=True, eq=False)
class UserChain:
    states: np.ndarray
    transition: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float).ravel()
        P = np.asarray(self.transition, dtype=float)
        n = s.shape[0]
        init = (np.full(n, 1.0 / n) if self.initial is None
                else np.asarray(self.initial, dtype=float).ravel())
        if n < 1 or P.shape != (n, n) or init.shape != (n,):
            raise ChannelError("inconsistent chain dimensions")
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ChannelError("gain levels must be finite and >= 0")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ChannelError("transition rows must be probability vectors")
        if np.any(init < 0) or abs(init.sum() - 1.0) > 1e-12:
            raise ChannelError("initial distribution must sum to 1")
        if not _irreducible(P):
            raise ChannelError("transition matrix is not irreducible")
        for a in (s, P, init):
            a.setflags(write=False)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "initial", init)

    @cached_property
    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.transition)

    @property
    def mean(self) -> float:
        return float(self.stationary @ self.states)

    @property
    def variance(self) -> float:
        return float(self.stationary @ (self.states - self.mean) ** 2)

    @property
    def max_step(self) -> float:
        d = np.abs(self.states[:, None] - self.states[None, :])
        return float(np.max(np.where(self.transition > 0, d, 0.0)))

    @property
    def mean_step(self) -> float:
        d = np.abs(self.states[:, None] - self.states[None, :])
        return float(self.stationary @ (self.transition * d).sum(axis=1))


@dataclass(frozen=True, eq=False)
class FadingProcess:
    """Independent per-user finite-state Markov chains of channel gains."""

    users: tuple

    def __post_init__(self):
        users = tuple(self.users)
        if not users:
            raise ChannelError("need at least one user")
        object.__setattr__(self, "users", users)

    @property
    def m(self) -> int:
        return len(self.users)

    @classmethod
    def iid(cls, chain: UserChain, m: int) -> "FadingProcess":
        return cls(tuple([chain] * m))

    @classmethod
    def constant(cls, gains) -> "FadingProcess":
        return cls(tuple(UserChain([g], [[1.0]], [1.0]) for g in gains))

    @classmethod
    def from_dict(cls, d) -> "FadingProcess":
        spec = d["users"] if isinstance(d, dict) else d
        return cls(tuple(UserChain(u["states"], u["transition"], u.get("initial"))
                         for u in spec))

    @classmethod
    def from_json(cls, text: str) -> "FadingProcess":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {"users": [{"states": u.states.tolist(),
                           "transition": u.transition.tolist(),
                           "initial": u.initial.tolist()} for u in self.users]}

    @property
    def mean(self) -> np.ndarray:
        return np.array([u.mean for u in self.users])

    @property
    def covariance(self) -> np.ndarray:
        return np.diag([u.variance for u in self.users])

    def _streams(self, seed, tag):
        ss = np.random.SeedSequence(seed, spawn_key=(tag,))
        return [np.random.default_rng(s) for s in ss.spawn(self.m)]

    def sample_stationary(self, n: int, seed) -> np.ndarray:
        """``(n, M)`` independent draws from the stationary distribution."""
        out = np.empty((n, self.m))
        for i, (u, rng) in enumerate(zip(self.users, self._streams(seed, 1))):
            out[:, i] = u.states[rng.choice(u.states.shape[0], size=n, p=u.stationary)]
        return out

    def joint_stationary(self):
        """All joint gain vectors with their stationary probabilities."""
        sizes = [u.states.shape[0] for u in self.users]
        if math.prod(sizes) > 1 << MAX_ENUM_USERS:
            raise RegionError("joint state space too large to enumerate")
        states = []
        probs = []
        for idx in itertools.product(*[range(s) for s in sizes]):
            states.append([u.states[j] for u, j in zip(self.users, idx)])
            probs.append(math.prod(u.stationary[j] for u, j in zip(self.users, idx)))
        return np.array(states), np.array(probs)

    def joint_index(self, state_idx) -> int:
        k = 0
        for u, j in zip(self.users, state_idx):
            k = k * u.states.shape[0] + int(j)
        return k


@dataclass(frozen=True, eq=False)
class ChannelPath:
    gains: np.ndarray
    states: np.ndarray
    seed: object

    def __len__(self):
        return self.gains.shape[0]


def sample_path(process: FadingProcess, n: int, seed) -> ChannelPath:
    """Markov path of ``n`` slots; identical for identical (process, n, seed)."""
    if n < 1:
        raise ChannelError("path length must be >= 1")
    rngs = process._streams(seed, 0)
    m = process.m
    kmax = max(u.states.shape[0] for u in process.users)
    cum = np.ones((m, kmax, kmax))
    n_states = np.empty(m, dtype=np.int64)
    init = np.empty(m, dtype=np.int64)
    uniforms = np.empty((n, m))
    for i, (u, rng) in enumerate(zip(process.users, rngs)):
        k = u.states.shape[0]
        n_states[i] = k
        cum[i, :k, :k] = np.cumsum(u.transition, axis=1)
        init[i] = rng.choice(k, p=u.initial)
        uniforms[:, i] = rng.random(n)
    idx = _kernels.markov_walk(cum, n_states, init, uniforms)
    gains = np.empty((n, m))
    for i, u in enumerate(process.users):
        gains[:, i] = u.states[idx[:, i]]
    gains.setflags(write=False)
    idx.setflags(write=False)
    return ChannelPath(gains, idx, seed)


@dataclass(frozen=True)
class FadingStatistics:
    mean: np.ndarray
    covariance: np.ndarray
    max_steps: np.ndarray
    w_hat: float
    w_bar: float


def step_statistics(process: FadingProcess, powers) -> FadingStatistics:
    """Exact stationary moments and power-weighted step sizes of the chain.

    ``w_hat = 0.5 * sum_i vhat_i p_i`` bounds the per-slot region distance;
    ``w_bar`` is its stationary mean.
    """
    p = np.asarray(powers, dtype=float)
    if p.shape != (process.m,):
        raise ChannelError("powers length does not match the process")
    vhat = np.array([u.max_step for u in process.users])
    vbar = np.array([u.mean_step for u in process.users])
    return FadingStatistics(process.mean, process.covariance, vhat,
                            0.5 * float(vhat @ p), 0.5 * float(vbar @ p))


def slot_variation(gains: np.ndarray, powers) -> np.ndarray:
    """``W_n = 0.5 * sum_i |H_i(n+1) - H_i(n)| p_i`` for each consecutive pair."""
    return 0.5 * np.abs(np.diff(gains, axis=0)) @ np.asarray(powers, dtype=float)


def sigma_H_squared(stats: FadingStatistics, powers, noise: float) -> float:
    p = np.asarray(powers, dtype=float)
    m = p.shape[0]
    if m > MAX_ENUM_USERS:
        raise RegionError("too many users to enumerate subsets")
    K = np.asarray(stats.covariance, dtype=float)
    hbar = np.asarray(stats.mean, dtype=float)
    total = 0.0
    for mask in range(1, 1 << m):
        gam = np.array([p[i] / noise if (mask >> i) & 1 else 0.0 for i in range(m)])
        var = float(gam @ K @ gam)
        zbar = float(gam @ hbar)
        total += var * (1.0 + ((1.0 + zbar) * (math.sqrt(2.0 * math.log1p(zbar))
                                               - math.sqrt(var) / 2.0)) ** 2)
    return 0.25 * total


def region_deviation_bound(sigma_h2: float, delta: float) -> float:
    """Chebyshev-type bound on ``P(d_H(C_g(P,H), C_a(P)) > delta)``."""
    if not delta > 0:
        raise ChannelError("delta must be positive")
    return min(1.0, sigma_h2 / delta ** 2)


def jensen_gap_bound(f_mean: float, var: float, curvature: float) -> float:
    """Upper bound on ``f(E X) - E f(X)`` for concave ``f >= 0`` with
    ``|f''| <= curvature``.

    The free Chebyshev parameter is optimized; when the optimum clips at 1
    the bound is ``f(E X)`` itself.
    """
    if f_mean < 0 or var < 0 or curvature < 0:
        raise ChannelError("arguments must be nonnegative")
    if var * curvature == 0:
        return 0.0
    if var * curvature >= 2.0 * f_mean:
        return float(f_mean)
    return math.sqrt(2.0 * curvature * var * f_mean) - var * curvature / 2.0


def log_variance_bound(x_mean: float, var: float) -> float:
    """Upper bound on ``Var(log(1 + X))`` from the mean and variance of X."""
    if var < 0 or x_mean < 0:
        raise ChannelError("mean and variance must be nonnegative")
    sd = math.sqrt(var)
    return var * (1.0 + ((1.0 + x_mean) * (math.sqrt(2.0 * math.log1p(x_mean))
                                           - sd / 2.0)) ** 2)


def birth_death_chain(levels, stay: float = 0.7) -> UserChain:
    """Reflecting nearest-neighbour walk on ``levels`` with uniform
    stationary law: it stays put with probability ``stay`` and otherwise
    steps up or down with equal probability."""
    levels = np.asarray(levels, dtype=float)
    n = levels.shape[0]
    if n < 2:
        raise ChannelError("need at least two levels")
    if not 0.0 <= stay < 1.0:
        raise ChannelError("stay must lie in [0, 1)")
    P = np.zeros((n, n))
    move = (1.0 - stay) / 2.0
    for s in range(n):
        P[s, s] += stay
        P[s, max(s - 1, 0)] += move
        P[s, min(s + 1, n - 1)] += move
    return UserChain(levels, P, np.full(n, 1.0 / n))


def _geometric_ratio(g: float, n: int) -> float:
    lv = g ** np.arange(n)
    return float(lv.std() / lv.mean())


def geometric_chain(mean: float, ratio: float, n_levels: int = 4,
                    stay: float = 0.7) -> UserChain:
    """Birth-death chain on geometrically spaced gains whose stationary
    ``std/mean`` equals ``ratio`` (must be below ``sqrt(n_levels - 1)``)."""
    if not 0 < ratio < math.sqrt(n_levels - 1):
        raise ChannelError("ratio out of reach for this number of levels")
    lo, hi = 1.0, 2.0
    while _geometric_ratio(hi, n_levels) < ratio:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _geometric_ratio(mid, n_levels) < ratio:
            lo = mid
        else:
            hi = mid
    lv = (0.5 * (lo + hi)) ** np.arange(n_levels)
    return birth_death_chain(lv * (mean / lv.mean()), stay)
