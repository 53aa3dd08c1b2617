"""Periodic heat kernel on ``[-pi, pi]`` as a truncated cosine series.

    G(t, x) = 1/(2 pi) + (1/pi) * sum_{k>=1} exp(-k^2 t) cos(k x)

The number of retained modes is chosen per ``t`` so that the omitted tail,
bounded by ``exp(-K^2 t) / (pi (1 - exp(-(2K+1) t)))``, stays below ``tol``.

For ``t < IMAGES_T`` the same function is evaluated through its image sum

    G(t, x) = sum_m exp(-(x + 2 pi m)^2 / (4 t)) / sqrt(4 pi t)

which converges after a few terms there and, unlike the truncated cosine
series, is accurate to relative precision far from the peak (so it stays
positive where ``G`` is tiny).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = ["KernelEvaluator", "eval_kernel", "kernel_sup_bound", "semigroup_check"]

T_MIN = 1e-6
IMAGES_T = 0.25


@dataclass(frozen=True)
class KernelEvaluator:
    """Evaluator for ``G``.

    ``truncation_K`` is the floor on the number of cosine modes; the actual
    count grows as ``t`` shrinks.
    """

    truncation_K: int = 16
    tol: float = 1e-14
    domain_half_width: float = math.pi

    def __post_init__(self):
        if self.truncation_K < 1:
            raise DomainError("truncation_K must be a positive integer")

    def tail_bound(self, t: float, K: int) -> float:
        return math.exp(-K * K * t) / (math.pi * -math.expm1(-(2 * K + 1) * t))

    def modes_for(self, t: float) -> int:
        """Smallest ``K >= truncation_K`` whose tail bound is below ``tol``."""
        _check_time(t)
        # exp(-K^2 t) <= tol * pi * (1 - e^{-(2K+1)t}); start from the leading-order guess
        K = max(self.truncation_K, int(math.sqrt(max(-math.log(self.tol), 1.0) / t)))
        while K > self.truncation_K and self.tail_bound(t, K - 1) < self.tol:
            K -= 1
        while self.tail_bound(t, K) >= self.tol:
            K += 1
        return K

    def mode_weights(self, t: float, k) -> np.ndarray:
        """Cosine-series coefficients ``exp(-k^2 t)`` of ``2 pi G(t, .)``."""
        k = np.asarray(k, dtype=float)
        return np.exp(-k * k * t)

    def __call__(self, t: float, x):
        return eval_kernel(self, t, x)

    def sampled(self, t: float, n_cells: int) -> np.ndarray:
        """``G(t, i*dx)`` for ``i = 0..n_cells-1`` with ``dx = 2 pi / n_cells``.

        Row ``i`` is the kernel at grid offset ``i``, the layout used by
        circular convolutions on the cell grid.
        """
        offsets = np.arange(n_cells) * (2 * math.pi / n_cells)
        return eval_kernel(self, t, offsets)


def _check_time(t):
    if not t > 0:
        raise DomainError(f"heat kernel needs t > 0 (got {t!r}); t -> 0 is a delta")
    if t < T_MIN:
        raise DomainError(f"t = {t!r} below the evaluator's resolution floor {T_MIN}")


def eval_kernel(ke: KernelEvaluator, t: float, x):
    """``G(t, x)`` for scalar ``t`` and scalar or array ``x``."""
    _check_time(t)
    xs = np.asarray(x, dtype=float)
    if t < IMAGES_T:
        return _images(ke, t, xs)
    K = ke.modes_for(t)
    k = np.arange(1, K + 1, dtype=float)
    w = np.exp(-k * k * t)
    flat = xs.reshape(-1)
    out = np.empty(flat.shape)
    # chunk to bound the (len(x), K) temporary
    step = max(1, 2_000_000 // K)
    for s in range(0, flat.size, step):
        out[s : s + step] = np.cos(np.outer(flat[s : s + step], k)) @ w
    out = 1.0 / (2 * math.pi) + out / math.pi
    out = out.reshape(xs.shape)
    return float(out) if xs.ndim == 0 else out


def _images(ke, t, xs):
    # wrap to [-pi, pi) and keep every image whose Gaussian factor exceeds tol
    r = np.mod(xs + math.pi, 2 * math.pi) - math.pi
    reach = math.sqrt(4 * t * max(-math.log(ke.tol * 1e-3), 1.0))
    M = int(math.ceil(reach / (2 * math.pi))) + 1
    out = np.zeros(r.shape)
    for m in range(-M, M + 1):
        d = r + 2 * math.pi * m
        out += np.exp(-d * d / (4 * t))
    out /= math.sqrt(4 * math.pi * t)
    return float(out) if xs.ndim == 0 else out


def kernel_sup_bound(
    ke: KernelEvaluator, t_min: float, t_max: float, n_grid: int = 400
) -> float:
    """Measured constant ``C_G`` in ``G(t, x) <= C_G t^{-1/2}`` on ``[t_min, t_max]``.

    ``G(t, .)`` peaks at ``x = 0`` (all cosine terms are maximal there), so the
    sup over ``x`` is the value at the origin; the sup over ``t`` is taken on a
    geometric grid that includes both endpoints.
    """
    if not (0 < t_min < t_max <= 1):
        raise DomainError(f"need 0 < t_min < t_max <= 1 (got {t_min!r}, {t_max!r})")
    ts = np.geomspace(t_min, t_max, n_grid)
    return max(math.sqrt(t) * eval_kernel(ke, t, 0.0) for t in ts)


def semigroup_check(
    ke: KernelEvaluator, s: float, t: float, x: float, n_nodes: int = 2048
) -> float:
    """``|(G(s, .) * G(t, .))(x) - G(s + t, x)|`` with periodic trapezoid quadrature."""
    y = -math.pi + np.arange(n_nodes) * (2 * math.pi / n_nodes)
    if s <= t:
        a, b = s, t
    else:
        a, b = t, s
    conv = float(np.sum(eval_kernel(ke, a, x - y) * eval_kernel(ke, b, y))) * (
        2 * math.pi / n_nodes
    )
    return abs(conv - eval_kernel(ke, s + t, x))
