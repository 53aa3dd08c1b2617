"""Heat-kernel convolutions of adapted fields and the moment bounds they obey.

For a field ``phi(s, y)`` on ``[0, T] x [-pi, pi]``

    Y(t, x) = int_0^t int G(t-s, x-y) phi(s, y) dy ds          (Lebesgue)
    Z(t, x) = int_0^t int G(t-s, x-y) phi(s, y) W(dy ds)       (stochastic)

Fields are piecewise constant in time on slices of length ``dt`` and in space
on the cells of the periodic grid.

``Y`` is evaluated with the midpoint rule in ``s`` on every slice except the
last, using the grid-sampled kernel normalised to unit mass. On the last slice
the kernel is close to a delta and the inner integral is replaced by its limit
``phi(s, x)`` (exact mass), which avoids evaluating ``G`` near ``t - s = 0``.

``Z`` is propagated mode by mode: with ``c = rfft(phi_j * dW_j)``

    Zhat_k(s_{j+1}) = exp(-k^2 dt) Zhat_k(s_j) + sqrt((1 - exp(-2 k^2 dt)) / (2 k^2 dt)) c_k

which reproduces the exact variance of every retained mode for fields that are
constant on each slice, whatever the slice length. ``method="kernel"`` gives
the direct space-time sum with kernel weights instead, for comparison.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field

import numpy as np

from .coefficients import CoefficientSpec, Regime, classify
from .errors import DomainError, PreconditionError
from .heat_kernel import KernelEvaluator, eval_kernel, kernel_sup_bound
from .noise import NoiseGrid, derive_stream

__all__ = [
    "AdaptedField",
    "BoundCheckParams",
    "TriplingParams",
    "LebesgueBoundReport",
    "StochasticBoundReport",
    "lebesgue_convolution",
    "lebesgue_convolution_grid",
    "stochastic_convolution",
    "stochastic_convolution_grid",
    "ito_variance_series",
    "verify_lebesgue_bound",
    "verify_stochastic_bound",
    "feasible_tripling_params",
    "wilson_interval",
]

TWO_PI = 2 * math.pi


@dataclass
class AdaptedField:
    """``samples[j]`` holds ``phi`` on the time slice ``[j dt, (j+1) dt)``."""

    samples: np.ndarray
    dt: float

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 2:
            raise DomainError("samples must have shape (n_steps, n_cells)")
        if not np.all(np.isfinite(s)):
            raise DomainError("samples must be finite")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if s.shape[0] * self.dt > 1 + 1e-12:
            raise DomainError(f"horizon T = {s.shape[0] * self.dt!r} exceeds 1")
        self.samples = s
        self.dt = float(self.dt)

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0]

    @property
    def n_cells(self) -> int:
        return self.samples.shape[1]

    @property
    def dx(self) -> float:
        return TWO_PI / self.n_cells

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        """Slice end times ``dt, 2 dt, ..., T``."""
        return self.dt * np.arange(1, self.n_steps + 1)

    @classmethod
    def constant(cls, c: float, T: float, n_steps: int, n_cells: int) -> "AdaptedField":
        return cls(np.full((n_steps, n_cells), float(c)), T / n_steps)

    @classmethod
    def from_function(cls, f, T: float, n_steps: int, n_cells: int) -> "AdaptedField":
        """Sample ``f(s, x)`` at slice starts and cell centres."""
        dt = T / n_steps
        s = dt * np.arange(n_steps)[:, None]
        x = -math.pi + (np.arange(n_cells) + 0.5) * (TWO_PI / n_cells)
        return cls(np.broadcast_to(f(s, x[None, :]), (n_steps, n_cells)), dt)

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.samples >= 0))

    def lp_integral(self, p: float) -> float:
        """``int_0^T int |phi|^p dy ds``."""
        return float(np.sum(np.abs(self.samples) ** p) * self.dx * self.dt)

    def scaled(self, a: float) -> "AdaptedField":
        return AdaptedField(a * self.samples, self.dt)


def _linear_interpolate(values, x) -> float:
    N = values.size
    pos = ((float(x) + math.pi) / (TWO_PI / N) - 0.5) % N
    i = int(math.floor(pos))
    w = pos - i
    return float((1 - w) * values[i % N] + w * values[(i + 1) % N])


def _normalised_kernel_hat(ke: KernelEvaluator, lag: float, n_cells: int) -> np.ndarray:
    g = ke.sampled(lag, n_cells)
    g = g / (g.sum() * (TWO_PI / n_cells))
    return np.fft.rfft(g)


# --------------------------------------------------------------------------
# Lebesgue convolution


def lebesgue_convolution_grid(phi: AdaptedField, ke: KernelEvaluator | None = None) -> np.ndarray:
    """``Y`` at all slice end times and cell centres, shape ``(n_steps, n_cells)``.

    Row ``n`` is ``Y(t_{n+1}, .)`` with ``t_{n+1} = (n+1) dt``.
    """
    ke = ke or KernelEvaluator()
    n, N, dt, dx = phi.n_steps, phi.n_cells, phi.dt, phi.dx
    ph = np.fft.rfft(phi.samples, axis=1)
    # H[m] is the normalised kernel transform at lag (m + 1/2) dt for m >= 1
    H = np.zeros((max(n, 1), N // 2 + 1), dtype=complex)
    for m in range(1, n):
        H[m] = _normalised_kernel_hat(ke, (m + 0.5) * dt, N)
    out = np.empty((n, N // 2 + 1), dtype=complex)
    for r in range(n):
        # Y(t_{r+1}): slices j = 0..r-1 at lag (r - j + 1/2) dt, slice r exact mass
        acc = ph[r].copy()
        if r > 0:
            acc += (H[r:0:-1] * ph[:r]).sum(axis=0) * dx
        out[r] = dt * acc
    return np.fft.irfft(out, n=N, axis=1)


def lebesgue_convolution(phi: AdaptedField, ke: KernelEvaluator, t: float, x) -> float:
    """``Y(t, x)`` for any ``0 <= t <= T`` and position ``x``.

    Whole slices ending before ``t`` use the midpoint lag; the slice containing
    ``t`` contributes ``(t - s_start) * phi(s_start, x)`` with ``phi(s, x)``
    interpolated linearly between cell centres (a convex combination, so sign
    and monotonicity carry over).
    """
    if not (0 <= t <= phi.T * (1 + 1e-12)):
        raise DomainError(f"t must lie in [0, T={phi.T!r}]")
    if t == 0:
        return 0.0
    dt, N, dx = phi.dt, phi.n_cells, phi.dx
    last = min(int(math.ceil(t / dt - 1e-9)) - 1, phi.n_steps - 1)
    y = -math.pi + (np.arange(N) + 0.5) * dx
    total = (t - last * dt) * _linear_interpolate(phi.samples[last], x)
    for j in range(last):
        lag = t - (j + 0.5) * dt
        g = eval_kernel(ke, lag, x - y)
        total += dt * float(np.dot(g, phi.samples[j])) / float(g.sum())
    return total


# --------------------------------------------------------------------------
# stochastic convolution


def _increments(phi: AdaptedField, noise: NoiseGrid) -> np.ndarray:
    if noise.n_cells != phi.n_cells:
        raise DomainError("noise grid and field have different cell counts")
    return noise.sample_block(phi.dt, phi.n_steps)


def _spectral_paths(phi_samples: np.ndarray, dW: np.ndarray, dt: float) -> np.ndarray:
    """Z at every slice end for a batch: inputs ``(..., n_steps, N)``."""
    N = phi_samples.shape[-1]
    k2 = np.arange(N // 2 + 1, dtype=float) ** 2
    decay = np.exp(-k2 * dt)
    scale = np.ones_like(k2)
    scale[1:] = np.sqrt(-np.expm1(-2 * k2[1:] * dt) / (2 * k2[1:] * dt))
    c = np.fft.rfft(phi_samples * dW, axis=-1) * scale
    zh = np.empty_like(c)
    acc = np.zeros(c.shape[:-2] + c.shape[-1:], dtype=complex)
    for j in range(c.shape[-2]):
        acc = decay * acc + c[..., j, :]
        zh[..., j, :] = acc
    return np.fft.irfft(zh, n=N, axis=-1) * (N / TWO_PI)


def stochastic_convolution_grid(
    phi: AdaptedField, noise: NoiseGrid, ke: KernelEvaluator | None = None, method: str = "spectral"
) -> np.ndarray:
    """``Z`` at all slice end times and cell centres, shape ``(n_steps, n_cells)``.

    Consumes ``n_steps`` increments from ``noise``.
    """
    dW = _increments(phi, noise)
    if method == "spectral":
        return _spectral_paths(phi.samples, dW, phi.dt)
    if method == "kernel":
        return _kernel_paths(phi, dW, ke or KernelEvaluator())
    raise ValueError(f"unknown method {method!r}")


def _kernel_paths(phi, dW, ke):
    n, N, dt, dx = phi.n_steps, phi.n_cells, phi.dt, phi.dx
    c = np.fft.rfft(phi.samples * dW, axis=1)
    out = np.empty_like(c)
    hats = [None] + [np.fft.rfft(ke.sampled(m * dt, N)) for m in range(1, n)]
    for r in range(n):
        # the slice ending at t_{r+1} enters as phi * dW / dx (delta kernel)
        acc = c[r] / dx
        for j in range(r):
            acc = acc + hats[r - j] * c[j]
        out[r] = acc
    return np.fft.irfft(out, n=N, axis=1)


def stochastic_convolution(
    phi: AdaptedField, ke: KernelEvaluator, noise: NoiseGrid, t: float, x, method: str = "spectral"
) -> float:
    """``Z(t, x)`` at a slice end time ``t``; ``x`` is interpolated by the retained modes."""
    steps = t / phi.dt
    r = int(round(steps))
    if r < 1 or r > phi.n_steps or abs(steps - r) > 1e-9:
        raise DomainError("t must be a slice end time of the field")
    sub = AdaptedField(phi.samples[:r], phi.dt)
    z = stochastic_convolution_grid(sub, noise, ke, method)[-1]
    return float(_trig_interpolate(z, x))


def _trig_interpolate(values, x):
    N = values.size
    zh = np.fft.rfft(values) / N
    k = np.arange(zh.size)
    w = np.full(zh.size, 2.0)
    w[0] = 1.0
    if N % 2 == 0:
        w[-1] = 1.0
    # grid node i sits at -pi + (i + 1/2) dx
    x0 = -math.pi + 0.5 * TWO_PI / N
    phase = np.exp(1j * np.outer(np.atleast_1d(np.asarray(x, dtype=float)) - x0, k))
    out = (phase * (w * zh)).real.sum(axis=1)
    return out[0] if np.ndim(x) == 0 else out


def ito_variance_series(t: float, n_terms: int | None = None) -> float:
    """``t/(2 pi) + (1/pi) sum_k (1 - exp(-2 k^2 t)) / (2 k^2)``, i.e. ``int_0^t int G^2``.

    With ``n_terms=None`` the sum runs to infinity: the closed form
    ``sum 1/(2k^2) = pi^2/12`` is used for the constant part and the
    exponentially small terms are summed until negligible.
    """
    if not t > 0:
        raise DomainError("t must be positive")
    if n_terms is not None:
        k = np.arange(1, n_terms + 1, dtype=float)
        return t / TWO_PI + float(np.sum(-np.expm1(-2 * k * k * t) / (2 * k * k))) / math.pi
    total = math.pi**2 / 12
    k = 1
    while True:
        term = math.exp(-2 * k * k * t) / (2 * k * k)
        total -= term
        if term < 1e-18:
            break
        k += 1
    return t / TWO_PI + total / math.pi


# --------------------------------------------------------------------------
# bound parameters


@dataclass(frozen=True)
class BoundCheckParams:
    """Exponents of the moment bounds.

    ``alpha = -(theta((p-2) gamma - p) + 2)`` and
    ``delta = -(theta((p-1) beta - p) + 1)``. ``C_G`` is the measured kernel
    constant and ``K_p = C_G ((2p-2)/(2p-3))^(p-1)``.
    """

    p: float
    theta: float = 1.0
    gamma: float = 1.0
    beta: float = 1.0
    n: int = 0
    C_G: float | None = None

    def __post_init__(self):
        if self.C_G is None:
            object.__setattr__(self, "C_G", kernel_sup_bound(KernelEvaluator(), 1e-4, 1.0))

    @property
    def alpha(self) -> float:
        return -(self.theta * ((self.p - 2) * self.gamma - self.p) + 2)

    @property
    def delta(self) -> float:
        return -(self.theta * ((self.p - 1) * self.beta - self.p) + 1)

    @property
    def K_p(self) -> float:
        p = self.p
        if not p > 1.5:
            raise PreconditionError(f"K_p needs p > 3/2 (got {p!r})")
        return self.C_G * ((2 * p - 2) / (2 * p - 3)) ** (p - 1)

    @property
    def stochastic_usable(self) -> bool:
        return self.p > 6 and self.alpha > 0

    @property
    def lebesgue_usable(self) -> bool:
        return self.p > 1.5 and self.delta > 0

    def to_dict(self):
        d = asdict(self)
        d.update(alpha=self.alpha, delta=self.delta)
        if self.p > 1.5:
            d["K_p"] = self.K_p
        return d


def _finite_or_none(v):
    return v if v is None or math.isfinite(v) else None


@dataclass(frozen=True)
class LebesgueBoundReport:
    passed: bool
    lhs: float
    rhs: float
    ratio: float
    params: dict

    def to_dict(self):
        d = asdict(self)
        d["ratio"] = _finite_or_none(self.ratio)
        return d


def verify_lebesgue_bound(phi: AdaptedField, params: BoundCheckParams, ke: KernelEvaluator | None = None) -> LebesgueBoundReport:
    """Pathwise ``sup_{t<=T} sup_x |Y|^p <= K_p T^(p-3/2) int int |phi|^p``.

    ``ratio`` is right side over left side (``inf`` when ``Y == 0``).
    """
    if not params.p > 1.5:
        raise PreconditionError(f"needs p > 3/2 (got {params.p!r})")
    Y = lebesgue_convolution_grid(phi, ke)
    lhs = float(np.max(np.abs(Y))) ** params.p
    rhs = params.K_p * phi.T ** (params.p - 1.5) * phi.lp_integral(params.p)
    ratio = rhs / lhs if lhs > 0 else math.inf
    return LebesgueBoundReport(bool(lhs <= rhs), lhs, rhs, ratio, params.to_dict())


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    from statistics import NormalDist

    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= successes <= n:
        raise ValueError("need 0 <= successes <= n")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    p = successes / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo, hi = max(0.0, centre - half), min(1.0, centre + half)
    # pin the exact endpoints so the interval always contains p
    if successes == 0:
        lo = 0.0
    if successes == n:
        hi = 1.0
    return lo, hi


@dataclass
class StochasticBoundReport:
    params: dict
    replicas: int
    levels: list[int]
    thresholds: list[float]
    exceedances: list[int]
    p_hat: list[float]
    ci: list[tuple[float, float]]
    decreasing: bool
    fitted_rate: float | None
    conservative_rate: float | None
    rate_consistent: bool | None
    moment_ratio: dict = field(default_factory=dict)
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.decreasing and self.rate_consistent is not False

    def to_dict(self):
        d = asdict(self)
        d["ci"] = [list(c) for c in self.ci]
        d["passed"] = self.passed
        for k in ("fitted_rate", "conservative_rate"):
            d[k] = None if d[k] is None else _finite_or_none(d[k])
        return d


def verify_stochastic_bound(
    spec: CoefficientSpec,
    params: BoundCheckParams,
    replicas: int,
    levels=(0, 1, 2),
    n_cells: int = 128,
    n_steps: int = 100,
    master_seed: int = 0,
    field_scale: float | None = None,
) -> StochasticBoundReport:
    """Decay of ``P(sup_{t<=1, x} Z^{sigma(phi_n)} > 3^(theta n))`` in ``n``.

    ``phi_n`` is the constant field with ``sigma(phi_n) = 3^(n+1)/sqrt(2 pi)``,
    so ``int_0^1 int sigma(phi_n)^2 = 3^(2(n+1))`` holds with equality and
    ``phi_n <= 3^(theta (n+1))`` because ``theta >= 1/gamma``. Then
    ``Z^{sigma(phi_n)} = sigma(phi_n) Z^1``, so one ensemble of ``sup Z^1``
    serves every level.

    ``conservative_rate`` is ``log_3(ci_lo(first) / ci_hi(last)) / (n_last - n_first)``
    and ``rate_consistent`` compares it with ``alpha`` (``None`` when the lower
    CI at the first level is 0). ``field_scale`` overrides ``sigma(phi_n)``
    with a common constant (``0`` gives the zero field).

    The returned moment ratios are ``E sup|Z|^p / (T^(p/4-3/2) E int int sigma(phi)^p)``
    at ``T = 1/2`` and ``T = 1`` for ``phi`` with ``sigma(phi) = 1``.
    """
    if not params.p > 6:
        raise PreconditionError(f"needs p > 6 (got {params.p!r})")
    if replicas < 1:
        raise PreconditionError("replicas must be >= 1")
    if spec.gamma > 0 and params.theta < 1 / spec.gamma:
        raise PreconditionError("theta < 1/gamma: the constant fields would violate the sup-norm hypothesis")
    levels = [int(n) for n in levels]
    if levels != sorted(set(levels)) or not levels:
        raise PreconditionError("levels must be distinct and increasing")
    dt = 1.0 / n_steps
    ones = np.ones((n_steps, n_cells))
    sup_full = np.empty(replicas)
    sup_half = np.empty(replicas)
    half = n_steps // 2
    batch = 200
    for start in range(0, replicas, batch):
        idx = range(start, min(replicas, start + batch))
        dW = np.stack([derive_stream(master_seed, i, n_cells).sample_block(dt, n_steps) for i in idx])
        Z = np.abs(_spectral_paths(ones, dW, dt))
        sup_full[start : start + len(idx)] = Z.max(axis=(1, 2))
        sup_half[start : start + len(idx)] = Z[:, :half].max(axis=(1, 2))
    thresholds, exc, p_hat, ci = [], [], [], []
    for n in levels:
        s_n = 3.0 ** (n + 1) / math.sqrt(TWO_PI) if field_scale is None else float(field_scale)
        thr = 3.0 ** (params.theta * n)
        k = int(np.count_nonzero(s_n * sup_full > thr))
        thresholds.append(thr)
        exc.append(k)
        p_hat.append(k / replicas)
        ci.append(wilson_interval(k, replicas))
    decreasing = all(b <= a for a, b in zip(exc, exc[1:]))
    span = levels[-1] - levels[0]
    fitted = cons = None
    consistent = None
    if span > 0:
        pos = [(n, p) for n, p in zip(levels, p_hat) if p > 0]
        if len(pos) >= 2:
            ns, ps = zip(*pos)
            fitted = -float(np.polyfit(ns, np.log(ps) / math.log(3), 1)[0])
        if ci[0][0] > 0:
            cons = math.log(ci[0][0] / ci[-1][1]) / math.log(3) / span
            consistent = bool(cons >= params.alpha)
    p = params.p
    ratios = {}
    for T, sup in ((0.5, sup_half), (1.0, sup_full)):
        ratios[str(T)] = float(np.mean(sup**p)) / (T ** (p / 4 - 1.5) * TWO_PI * T)
    note = "moment constant degrades as p decreases to 6; ratios are reported, not bounded"
    return StochasticBoundReport(
        params=params.to_dict(), replicas=replicas, levels=levels, thresholds=thresholds,
        exceedances=exc, p_hat=p_hat, ci=ci, decreasing=decreasing,
        fitted_rate=fitted, conservative_rate=cons, rate_consistent=consistent,
        moment_ratio=ratios, note=note,
    )


# --------------------------------------------------------------------------
# tripling parameters


@dataclass(frozen=True)
class TriplingParams:
    """Parameters of the level-tripling construction.

    ``theta`` bounds the sup-norm by ``3^(theta (n+1))``, ``eta`` sets the
    lower corridor ``3^(eta n)``, ``n0`` is the first level and
    ``T_n = 3^(-n x)`` the time allowed at level ``n``.
    """

    beta: float
    gamma: float
    theta: float
    eta: float
    n0: int
    x: float
    theta_window: tuple[float, float]
    eta_window: tuple[float, float]
    feasible: bool = True
    reason: str = ""

    def level_time(self, n: int) -> float:
        return 3.0 ** (-n * self.x)

    def to_dict(self):
        return asdict(self)




def _exact(v) -> Fraction:
    # decimal inputs such as 1.1 are meant as 11/10, not the nearest binary double
    return Fraction(repr(float(v))) if not isinstance(v, Fraction) else v


def feasible_tripling_params(spec: CoefficientSpec, theta: float | None = None) -> TriplingParams:
    """Derive ``(theta, eta, n0, x)`` for a region-B exponent pair.

    ``theta`` must exceed ``1/(3-2 gamma)`` and ``2/(3-beta)``, be at least 1
    and stay below ``1/(2 gamma - beta)``. ``eta`` lies in
    ``((2 gamma - beta) theta, 1)``. By default ``theta`` maximises the smaller
    of the two margins, ``theta - theta_lo`` and the width of the ``eta``
    window, which gives ``theta = (1 + theta_lo) / (1 + 2 gamma - beta)``.
    ``eta`` is the midpoint of its window, ``n0`` the smallest positive
    integer with ``(beta/2) 3^((2 gamma - beta) theta (n0+1) - eta n0) < 1``
    and ``x = (beta - 1)/2``.

    The arithmetic is exact in the decimal values of the inputs.
    """
    if classify(spec) is not Regime.B:
        raise PreconditionError(f"tripling needs region B (got {classify(spec).value})")
    b, g = _exact(spec.beta), _exact(spec.gamma)
    d = 2 * g - b
    lo = max(1 / (3 - 2 * g), 2 / (3 - b), Fraction(1))
    hi = 1 / d
    th = (1 + lo) / (1 + d) if theta is None else _exact(theta)
    x = (b - 1) / 2
    eta_lo = d * th
    window = (float(lo), float(hi))
    ok = th > 1 / (3 - 2 * g) and th > 2 / (3 - b) and 1 <= th < hi
    if not ok or eta_lo >= 1:
        return TriplingParams(float(b), float(g), float(th), math.nan, 0, float(x), window,
                              (float(eta_lo), 1.0), False,
                              f"theta={float(th)!r} outside the feasible window {window!r}")
    eta = (eta_lo + 1) / 2
    # (b/2) 3^e < 1  <=>  e < -log_3(b/2); e is exact, the log is not
    limit = -math.log(float(b) / 2, 3)
    n0 = 1
    while float(d * th * (n0 + 1) - eta * n0) >= limit:
        n0 += 1
    return TriplingParams(float(b), float(g), float(th), float(eta), n0, float(x), window, (float(eta_lo), 1.0))
