"""Power-law drift and noise coefficients, their cutoffs, and the regime map.

The equation is ``u_t = u_xx + b(u) + sigma(u) W'`` on the periodic interval
``[-pi, pi]`` with

    b(u) = u**beta            (beta >= 1),   min(u, u**beta)   (beta < 1)
    sigma(u) = u**gamma       (gamma >= 1),  min(u, u**gamma)  (gamma < 1)

Solutions are nonnegative, so every coefficient is defined on ``u >= 0`` only.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = [
    "CoefficientSpec",
    "Regime",
    "classify",
    "eval_b",
    "eval_sigma",
    "eval_cutoff",
    "lipschitz_constant",
]


class Regime(str, enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"
    F = "F"
    BOUNDARY = "Boundary"
    OTHER = "Other"

    @property
    def explosive(self) -> bool | None:
        """True where explosion has positive probability, False where it cannot
        happen, None where the question is open or unclassified."""
        if self in (Regime.A, Regime.B, Regime.D):
            return True
        if self in (Regime.C, Regime.E):
            return False
        return None


@dataclass(frozen=True)
class CoefficientSpec:
    """Exponents of the drift and noise coefficients.

    ``drift`` and ``noise`` switch the corresponding term off entirely; they
    exist for the deterministic and pure-diffusion oracles.
    """

    beta: float
    gamma: float
    drift: bool = True
    noise: bool = True

    def __post_init__(self):
        for name in ("beta", "gamma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise DomainError(f"{name} must be a finite number >= 0 (got {v!r})")
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def regime(self) -> Regime:
        return classify(self)


def _as_nonneg(u):
    arr = np.asarray(u, dtype=float)
    if np.any(arr < 0):
        raise DomainError("coefficients are only defined for u >= 0")
    return arr


def _ret(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def _power_law(arr, exponent):
    if exponent >= 1.0:
        return arr if exponent == 1.0 else arr**exponent
    return np.minimum(arr, arr**exponent)


def eval_b(spec: CoefficientSpec, u):
    """Drift ``b(u)``; accepts scalars or arrays of nonnegative values."""
    arr = _as_nonneg(u)
    out = _power_law(arr, spec.beta) if spec.drift else np.zeros_like(arr)
    return _ret(out, u)


def eval_sigma(spec: CoefficientSpec, u):
    """Noise coefficient ``sigma(u)``; ``sigma(0) == 0`` for every gamma."""
    arr = _as_nonneg(u)
    out = _power_law(arr, spec.gamma) if spec.noise else np.zeros_like(arr)
    return _ret(out, u)


def eval_cutoff(spec: CoefficientSpec, n: float, u, which: str = "drift"):
    """Cutoff coefficient frozen at its value at ``n`` outside ``[0, n]``.

    The coefficients are only defined on the nonnegative half line, so the
    freeze below the interval uses the value at 0 (which is 0 for both b and
    sigma). The result is globally Lipschitz with constant
    :func:`lipschitz_constant`.
    """
    if not n >= 1:
        raise DomainError(f"cutoff level must be >= 1 (got {n!r})")
    arr = np.asarray(np.clip(np.asarray(u, dtype=float), 0.0, float(n)))
    if which == "drift":
        out = _power_law(arr, spec.beta) if spec.drift else np.zeros_like(arr)
    elif which == "diffusion":
        out = _power_law(arr, spec.gamma) if spec.noise else np.zeros_like(arr)
    else:
        raise ValueError(f"which must be 'drift' or 'diffusion' (got {which!r})")
    return _ret(out, u)


def lipschitz_constant(spec: CoefficientSpec, n: float, which: str = "drift") -> float:
    """Largest slope of the coefficient on ``[0, n]``.

    For exponents below one the ``min(u, u**e)`` form has slope 1 on
    ``[0, 1]`` and slope ``e * u**(e-1) < 1`` beyond, so the constant is 1.
    """
    if which == "drift":
        on, e = spec.drift, spec.beta
    elif which == "diffusion":
        on, e = spec.noise, spec.gamma
    else:
        raise ValueError(f"which must be 'drift' or 'diffusion' (got {which!r})")
    if not on or n <= 0:
        return 0.0
    if e > 1.0:
        return e * float(n) ** (e - 1.0)
    return 1.0


def classify(spec: CoefficientSpec) -> Regime:
    """Place ``(beta, gamma)`` in the explosion-region map.

    Regions are tested in the order A, B, C, D, E, F. The line
    ``gamma == beta / 2`` belongs to A. Points on the other separating curves
    (``beta == 1``, ``gamma == 3/2``, ``gamma == (beta+3)/4``,
    ``gamma == (1+beta)/2``, the ray ``gamma == 0, beta > 1``) are Boundary.
    """
    b, g = spec.beta, spec.gamma
    if b > 1 and 0 < g <= b / 2:
        return Regime.A
    if 1 < b < 3 and b / 2 < g < (b + 3) / 4:
        return Regime.B
    if 0 <= b < 1 and 0 <= g < 1.5:
        return Regime.C
    if g > 1.5:
        return Regime.D
    if 1 < b < 2 and (1 + b) / 2 < g < 1.5:
        return Regime.E
    if 1 < b < 3 and (b + 3) / 4 < g < min((1 + b) / 2, 1.5):
        return Regime.F
    on_curve = (
        b == 1
        or g == 1.5
        or (g == 0 and b > 1)
        or (1 < b < 3 and g in ((b + 3) / 4, (1 + b) / 2))
    )
    return Regime.BOUNDARY if on_curve else Regime.OTHER
