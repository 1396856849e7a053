"""Concave rate utilities: weighted alpha-fair and user-supplied."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class UtilityDomainError(ValueError):
    pass


def _fair(x, alpha):
    if alpha == 1.0:
        return np.log(x)
    return x ** (1.0 - alpha) / (1.0 - alpha)


def alpha_fair_value(w, alpha: float, r) -> float:
    """``sum_i w_i f_alpha(r_i)`` with ``f_1 = log``."""
    w = np.asarray(w, dtype=float)
    r = np.asarray(r, dtype=float)
    if alpha < 0:
        raise UtilityDomainError("alpha must be >= 0")
    if alpha >= 1 and np.any(r <= 0):
        raise UtilityDomainError(f"alpha={alpha} needs strictly positive rates, got {r}")
    if np.any(r < 0):
        raise UtilityDomainError(f"negative rate {r}")
    if alpha == 0:
        return float(w @ r)
    return float(w @ _fair(r, alpha))


def alpha_fair_subgradient(w, alpha: float, r) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    r = np.asarray(r, dtype=float)
    if alpha < 0:
        raise UtilityDomainError("alpha must be >= 0")
    if alpha == 0:
        return w.copy()
    if np.any(r <= 0):
        raise UtilityDomainError(f"alpha={alpha} subgradient needs positive rates, got {r}")
    return w * r ** (-alpha)


@dataclass(frozen=True)
class UtilityModel:
    """Utility with value and gradient oracles.

    For ``kind="alpha_fair"`` the function is extended linearly below
    ``r_min`` in each coordinate. The extension is concave, agrees with the
    alpha-fair function on ``[r_min, inf)``, and caps the gradient at
    ``w_i * r_min**-alpha``.

    ``A``, ``B`` and ``Omega`` are optional curvature/Lipschitz constants
    used by the tracking and gap bounds; ``B`` defaults to the gradient-norm
    bound implied by ``r_min``.
    """

    kind: str = "alpha_fair"
    weights: tuple = (1.0,)
    alpha: float = 1.0
    r_min: float = 1e-3
    value_fn: Optional[Callable] = field(default=None, compare=False, repr=False)
    grad_fn: Optional[Callable] = field(default=None, compare=False, repr=False)
    differentiable: bool = True
    A: Optional[float] = None
    B: Optional[float] = None
    Omega: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(x) for x in self.weights))
        if self.kind == "alpha_fair":
            if self.alpha < 0 or any(x <= 0 for x in self.weights):
                raise UtilityDomainError("need alpha >= 0 and positive weights")
            if self.alpha > 0 and not self.r_min > 0:
                raise UtilityDomainError("r_min must be positive")
            if self.B is None:
                object.__setattr__(self, "B", self.gradient_bound())
        elif self.kind == "generic":
            if self.value_fn is None or self.grad_fn is None:
                raise UtilityDomainError("generic utility needs value_fn and grad_fn")
        else:
            raise UtilityDomainError(f"unknown utility kind {self.kind!r}")

    @classmethod
    def alpha_fair(cls, weights, alpha, r_min=1e-3, **consts):
        return cls("alpha_fair", tuple(weights), float(alpha), float(r_min), **consts)

    @classmethod
    def linear(cls, weights, **consts):
        return cls("alpha_fair", tuple(weights), 0.0, 1e-3, **consts)

    @property
    def m(self) -> int:
        return len(self.weights)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights)

    def with_constants(self, **consts) -> "UtilityModel":
        from dataclasses import replace
        return replace(self, **consts)

    def value(self, r) -> float:
        if self.kind == "generic":
            return float(self.value_fn(np.asarray(r, dtype=float)))
        r = np.asarray(r, dtype=float)
        w = self.w
        if self.alpha == 0:
            return float(w @ r)
        x = np.maximum(r, self.r_min)
        base = _fair(x, self.alpha)
        lin = np.where(r < self.r_min, self.r_min ** (-self.alpha) * (r - self.r_min), 0.0)
        return float(w @ (base + lin))

    def gradient(self, r) -> np.ndarray:
        if self.kind == "generic":
            return np.asarray(self.grad_fn(np.asarray(r, dtype=float)), dtype=float)
        r = np.asarray(r, dtype=float)
        if self.alpha == 0:
            return self.w.copy()
        return self.w * np.maximum(r, self.r_min) ** (-self.alpha)

    def neg_hessian_diag(self, r) -> np.ndarray:
        """Diagonal of ``-Hessian`` (zero on the linear extension)."""
        if self.kind != "alpha_fair":
            raise UtilityDomainError("Hessian only available for alpha-fair utilities")
        r = np.asarray(r, dtype=float)
        h = self.alpha * self.w * np.maximum(r, self.r_min) ** (-self.alpha - 1.0)
        return np.where(r < self.r_min, 0.0, h)

    def gradient_bound(self) -> float:
        """Euclidean norm bound on the gradient over the nonnegative orthant."""
        if self.alpha == 0:
            return float(np.linalg.norm(self.w))
        return float(np.linalg.norm(self.w * self.r_min ** (-self.alpha)))

    def max_gradient_component(self) -> float:
        """Largest single gradient coordinate, ``max_i w_i r_min**-alpha``."""
        return float(np.max(self.w * (self.r_min ** (-self.alpha) if self.alpha else 1.0)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "weights": list(self.weights), "alpha": self.alpha,
                "r_min": self.r_min, "A": self.A, "B": self.B, "Omega": self.Omega}

    @classmethod
    def from_dict(cls, d: dict) -> "UtilityModel":
        consts = {k: d[k] for k in ("A", "B", "Omega") if d.get(k) is not None}
        return cls.alpha_fair(d["weights"], d.get("alpha", 1.0), d.get("r_min", 1e-3),
                              **consts)
