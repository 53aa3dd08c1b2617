"""Semi-implicit time stepping of the cutoff equation with explosion detection.

One step of size ``dt`` from ``u`` at cutoff level ``n``:

1. explicit drift and noise: ``v = u + dt*b_n(u) + sigma_n(u) * dW / dx``
2. implicit periodic diffusion: ``(I - dt*Laplacian) w = v``, i.e. Fourier mode
   ``k`` is multiplied by ``1 / (1 + dt*k^2)``
3. positivity clamp ``w <- max(w, 0)``

``dt = min(dt_base, dt_safety / L)`` where ``L`` is the slope of ``b`` up to the
current sup-norm, so the step shrinks as the solution approaches blow-up.

Trajectories climb a ladder of cutoff levels: dynamics use ``b_n, sigma_n``
while the sup-norm is at most ``n``; when it exceeds ``n`` the hit time is
recorded and the next level takes over. Explosion is declared once the
sup-norm exceeds ``u_explode``, or when the stiffness guard would push ``dt``
below ``dt_min`` (flagged ``resolution_limited``).

All paths of an ensemble advance together as rows of one array. Every row
operation (FFT along the last axis, row reductions, elementwise updates) is
arithmetically identical to the single-row case, so a trajectory's output
does not depend on which batch it ran in.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .coefficients import CoefficientSpec
from .errors import ConfigError, DomainError, IntegrationError, StiffnessError
from .noise import NoiseGrid

__all__ = [
    "FieldState",
    "StepperConfig",
    "ExplosionMonitor",
    "TrajectoryRecord",
    "default_ladder",
    "make_initial_condition",
    "step",
    "run_trajectory",
    "run_ensemble",
]

CSV_HEADER = ("t", "I", "sup_norm", "level", "qv_accum")


@dataclass
class FieldState:
    """Cell-centre values of ``u`` on the periodic grid at one time."""

    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise DomainError("values must be a 1-D array with at least 2 cells")
        if not np.all(np.isfinite(v)):
            raise DomainError("values must be finite")
        if np.any(v < 0):
            raise DomainError("values must be nonnegative")
        self.values = v
        self.time = float(self.time)

    @property
    def n_cells(self) -> int:
        return self.values.size

    @property
    def dx(self) -> float:
        return 2 * math.pi / self.values.size

    @property
    def x(self) -> np.ndarray:
        return cell_centres(self.values.size)

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], n_cells: int, time: float = 0.0):
        return cls(np.asarray(f(cell_centres(n_cells)), dtype=float), time)


def cell_centres(n_cells: int) -> np.ndarray:
    return -math.pi + (np.arange(n_cells) + 0.5) * (2 * math.pi / n_cells)


def default_ladder(u_explode: float) -> tuple[float, ...]:
    """Levels ``3, 9, 27, ...`` up to the first one at or above ``u_explode``."""
    levels = [3.0]
    while levels[-1] < u_explode:
        levels.append(levels[-1] * 3.0)
    return tuple(levels)


@dataclass(frozen=True)
class StepperConfig:
    dt_base: float = 1e-4
    dt_safety: float = 0.1
    u_explode: float = 1e8
    cutoff_ladder: tuple[float, ...] | None = None
    horizon: float = 5.0
    dt_min: float = 1e-12

    def __post_init__(self):
        checks = [
            ("dt_base", self.dt_base > 0),
            ("dt_safety", self.dt_safety > 0),
            ("u_explode", self.u_explode > 0),
            ("horizon", self.horizon > 0),
            ("dt_min", 0 < self.dt_min <= self.dt_base),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"{name} out of range (got {getattr(self, name)!r})")
        if self.cutoff_ladder is not None:
            lad = tuple(float(v) for v in self.cutoff_ladder)
            if not lad or lad[0] < 1 or any(b <= a for a, b in zip(lad, lad[1:])):
                raise ConfigError("cutoff_ladder must be strictly increasing levels >= 1")
            object.__setattr__(self, "cutoff_ladder", lad)

    @property
    def ladder(self) -> tuple[float, ...]:
        return self.cutoff_ladder if self.cutoff_ladder is not None else default_ladder(self.u_explode)

    def stiffness_dt(self, spec: CoefficientSpec, umax):
        """Step allowed by ``dt_base`` and the drift stiffness guard (vectorised)."""
        umax = np.asarray(umax, dtype=float)
        if not spec.drift:
            return np.full(umax.shape, self.dt_base)
        if spec.beta > 1:
            slope = spec.beta * umax ** (spec.beta - 1)
        else:
            slope = np.where(umax > 0, 1.0, 0.0)
        with np.errstate(divide="ignore"):
            return np.minimum(self.dt_base, self.dt_safety / slope)


@dataclass
class ExplosionMonitor:
    ladder_hits: list[tuple[float, float]] = field(default_factory=list)
    exploded: bool = False
    explosion_time: float | None = None
    resolution_limited: bool = False


@dataclass
class TrajectoryRecord:
    """Outcome of one trajectory.

    The ``t, I, sup_norm, level, qv_accum, b_accum`` series and ``probes`` are
    filled only when the run recorded series; the scalar fields always are.
    ``stop_reason`` is one of ``"exploded"``, ``"horizon"``, ``"error"`` or the
    reason reported by a stopping rule (``"up"``, ``"down"``, ``"sup"``).
    """

    monitor: ExplosionMonitor
    final_state: FieldState
    stop_reason: str
    stop_time: float
    qv_total: float
    b_total: float
    n_steps: int
    clamp_count: int
    min_value: float
    t: np.ndarray | None = None
    I: np.ndarray | None = None
    sup_norm: np.ndarray | None = None
    level: np.ndarray | None = None
    qv_accum: np.ndarray | None = None
    b_accum: np.ndarray | None = None
    probes: dict[str, np.ndarray] = field(default_factory=dict)
    error: str | None = None

    @property
    def exploded(self) -> bool:
        return self.monitor.exploded

    @property
    def explosion_time(self) -> float | None:
        return self.monitor.explosion_time

    @property
    def censored(self) -> bool:
        return self.stop_reason == "horizon"

    @property
    def cell_steps(self) -> int:
        return self.n_steps * self.final_state.n_cells

    def csv_rows(self):
        if self.t is None:
            raise ValueError("record was produced without series")
        for row in zip(self.t, self.I, self.sup_norm, self.level, self.qv_accum):
            yield tuple(float(v) for v in row)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            w.writerows(self.csv_rows())


def make_initial_condition(kind: str, n_cells: int, **params) -> FieldState:
    """Initial fields: ``constant`` (``value=c``) or ``paper_profile`` (``n0, theta``).

    ``paper_profile`` is the constant field ``3**n0 / (2 pi)``: its L1 norm is
    ``3**n0`` and its sup-norm stays below ``3**(theta*n0)`` for ``theta >= 1``.
    """
    if n_cells < 2:
        raise ConfigError("n_cells must be >= 2")
    if kind == "constant":
        c = float(params.get("value", 0.0))
        if not (math.isfinite(c) and c >= 0):
            raise ConfigError(f"constant initial value must be finite and >= 0 (got {c!r})")
        return FieldState(np.full(n_cells, c))
    if kind == "paper_profile":
        n0 = params.get("n0")
        theta = float(params.get("theta", 1.0))
        if n0 is None or int(n0) != n0 or n0 < 1:
            raise ConfigError(f"paper_profile needs an integer n0 >= 1 (got {n0!r})")
        if theta < 1:
            raise ConfigError(f"paper_profile needs theta >= 1 (got {theta!r})")
        c = 3.0 ** int(n0) / (2 * math.pi)
        if c > 3.0 ** (theta * n0):
            raise ConfigError("paper_profile violates the sup-norm constraint")
        return FieldState(np.full(n_cells, c))
    raise ConfigError(f"unknown initial condition kind {kind!r}")


# --------------------------------------------------------------------------
# core kernel


def _coefficients(spec: CoefficientSpec, u: np.ndarray, level: np.ndarray):
    capped = np.minimum(u, level[:, None])
    if spec.drift:
        e = spec.beta
        b = capped if e == 1 else (capped**e if e > 1 else np.minimum(capped, capped**e))
    else:
        b = np.zeros_like(u)
    if spec.noise:
        e = spec.gamma
        s = capped if e == 1 else (capped**e if e > 1 else np.minimum(capped, capped**e))
    else:
        s = np.zeros_like(u)
    return b, s


def _advance(u, dt, b, s, dW, dx, k2):
    """Rows of ``u`` after one IMEX step; returns ``(w, n_clamped_per_row)``."""
    # overflow is detected by the caller through the finiteness check
    with np.errstate(over="ignore", invalid="ignore"):
        v = u + dt[:, None] * b + s * dW / dx
        w = np.fft.irfft(np.fft.rfft(v, axis=-1) / (1.0 + dt[:, None] * k2), n=u.shape[-1], axis=-1)
    neg = w < 0
    clamped = neg.sum(axis=-1)
    if clamped.any():
        w[neg] = 0.0
    return w, clamped


def _wavenumbers_sq(n_cells: int) -> np.ndarray:
    k = np.arange(n_cells // 2 + 1, dtype=float)
    return k * k


def _start_level_index(ladder: np.ndarray, level_floor: float) -> int:
    i = int(np.searchsorted(ladder, level_floor, side="left"))
    return min(i, ladder.size - 1)


def step(
    state: FieldState,
    spec: CoefficientSpec,
    level: float,
    noise: NoiseGrid,
    cfg: StepperConfig,
    dt: float | None = None,
) -> FieldState:
    """One IMEX step at cutoff level ``level``; ``dt`` defaults to the adaptive choice."""
    if noise.n_cells != state.n_cells:
        raise ValueError("noise grid and state have different cell counts")
    u = state.values[None, :]
    if dt is None:
        dt = float(cfg.stiffness_dt(spec, u.max()))
        if dt < cfg.dt_min:
            raise StiffnessError("explosion-resolution limit: dt underflow", state)
    dt_arr = np.array([dt])
    b, s = _coefficients(spec, u, np.array([float(level)]))
    dW = (noise.sample_increments(dt) if spec.noise else _skip(noise))[None, :]
    w, _ = _advance(u, dt_arr, b, s, dW, state.dx, _wavenumbers_sq(state.n_cells))
    if not np.all(np.isfinite(w)):
        raise IntegrationError("non-finite values after step", state)
    return FieldState(w[0], state.time + dt)


def _skip(noise: NoiseGrid) -> np.ndarray:
    noise.counter += 1
    return np.zeros(noise.n_cells)


_REASONS = {1: "up", 2: "down", 3: "sup"}


def run_ensemble(
    initial: FieldState | Sequence[FieldState],
    spec: CoefficientSpec,
    cfg: StepperConfig,
    streams: Sequence[NoiseGrid],
    probes: Mapping[str, Callable] | None = None,
    stop_rules: Sequence = (),
    record_series: bool = False,
    start_level: float | None = None,
    promote: bool = True,
    raise_errors: bool = False,
) -> list[TrajectoryRecord]:
    """Advance one trajectory per stream until explosion, a stopping rule or the horizon.

    ``initial`` is one state shared by all paths or one state per path.
    ``probes`` map names to functions ``f(values, spec)`` acting on
    ``(paths, cells)`` arrays and returning one number per path; they are
    evaluated at the start and after every step when ``record_series`` is set.
    ``stop_rules`` expose ``codes(I, sup)`` returning 0 (continue) or a reason
    code per path. ``start_level`` raises the first cutoff level; with
    ``promote=False`` the cutoff stays frozen there (the cutoff equation
    proper), hits are still recorded.
    """
    P = len(streams)
    if isinstance(initial, FieldState):
        initial = [initial] * P
    if len(initial) != P:
        raise ValueError("need one initial state per stream")
    N = initial[0].n_cells
    if any(s.n_cells != N for s in initial) or any(g.n_cells != N for g in streams):
        raise ValueError("all states and streams must share n_cells")
    probes = dict(probes or {})
    dx = 2 * math.pi / N
    k2 = _wavenumbers_sq(N)
    ladder = np.asarray(cfg.ladder, dtype=float)

    U = np.stack([s.values for s in initial])
    t = np.array([s.time for s in initial], dtype=float)
    sup = U.max(axis=1)
    floor = sup if start_level is None else np.maximum(sup, start_level)
    li = np.array([_start_level_index(ladder, f) for f in floor])
    level = ladder[li]
    qv = np.zeros(P)
    bacc = np.zeros(P)
    n_steps = np.zeros(P, dtype=np.int64)
    clamps = np.zeros(P, dtype=np.int64)
    monitors = [ExplosionMonitor() for _ in range(P)]
    frozen_hit = np.zeros(P, dtype=bool)
    stop_reason: list[str | None] = [None] * P
    errors: list[str | None] = [None] * P
    active = np.ones(P, dtype=bool)
    chunks = []

    def observe(idx, I):
        if record_series:
            vals = {name: np.asarray(f(U[idx], spec), dtype=float) for name, f in probes.items()}
            chunks.append((idx, t[idx].copy(), I, sup[idx].copy(), level[idx].copy(), qv[idx].copy(), bacc[idx].copy(), vals))

    def finish(i, reason):
        active[i] = False
        stop_reason[i] = reason

    def check_after(idx, I):
        # ladder, explosion, stopping rules, horizon -- in that order
        over = sup[idx] > level[idx]
        for j in np.flatnonzero(over):
            i = idx[j]
            if promote:
                while sup[i] > level[i] and li[i] < ladder.size - 1:
                    monitors[i].ladder_hits.append((float(level[i]), float(t[i])))
                    li[i] += 1
                    level[i] = ladder[li[i]]
            elif not frozen_hit[i]:
                monitors[i].ladder_hits.append((float(level[i]), float(t[i])))
                frozen_hit[i] = True
        boom = sup[idx] > cfg.u_explode
        for j in np.flatnonzero(boom):
            i = idx[j]
            monitors[i].exploded = True
            monitors[i].explosion_time = float(t[i])
            finish(i, "exploded")
        live = ~boom
        for rule in stop_rules:
            codes = np.asarray(rule.codes(I, sup[idx]))
            for j in np.flatnonzero((codes > 0) & live):
                finish(idx[j], _REASONS[int(codes[j])])
                live[j] = False
        done = live & (cfg.horizon - t[idx] <= 1e-12 * max(1.0, cfg.horizon))
        for j in np.flatnonzero(done):
            finish(idx[j], "horizon")

    idx = np.arange(P)
    I0 = U.sum(axis=1) * dx
    observe(idx, I0)
    check_after(idx, I0)

    while active.any():
        idx = np.flatnonzero(active)
        u = U[idx]
        dt = cfg.stiffness_dt(spec, sup[idx])
        stiff = dt < cfg.dt_min
        if stiff.any():
            for j in np.flatnonzero(stiff):
                i = idx[j]
                if raise_errors:
                    raise StiffnessError("explosion-resolution limit: dt underflow", FieldState(U[i], t[i]))
                monitors[i].exploded = True
                monitors[i].resolution_limited = True
                monitors[i].explosion_time = float(t[i])
                finish(i, "exploded")
            keep = ~stiff
            idx, u, dt = idx[keep], u[keep], dt[keep]
            if idx.size == 0:
                continue
        dt = np.minimum(dt, cfg.horizon - t[idx])
        b, s = _coefficients(spec, u, level[idx])
        if spec.noise:
            dW = np.stack([streams[i].sample_increments(d) for i, d in zip(idx, dt)])
        else:
            dW = np.stack([_skip(streams[i]) for i in idx])
        w, clamped = _advance(u, dt, b, s, dW, dx, k2)
        bad = ~np.all(np.isfinite(w), axis=1)
        if bad.any():
            for j in np.flatnonzero(bad):
                i = idx[j]
                if raise_errors:
                    raise IntegrationError("non-finite values after step", FieldState(U[i], t[i]))
                errors[i] = f"non-finite values at t={t[i]!r}"
                finish(i, "error")
            keep = ~bad
            idx, w, dt, b, s, clamped = idx[keep], w[keep], dt[keep], b[keep], s[keep], clamped[keep]
            if idx.size == 0:
                continue
        qv[idx] += dt * (s * s).sum(axis=1) * dx
        bacc[idx] += dt * b.sum(axis=1) * dx
        clamps[idx] += clamped
        n_steps[idx] += 1
        t[idx] += dt
        U[idx] = w
        sup[idx] = w.max(axis=1)
        I = w.sum(axis=1) * dx
        observe(idx, I)
        check_after(idx, I)

    series = _assemble_series(chunks, P, list(probes)) if record_series else None
    records = []
    for i in range(P):
        rec = TrajectoryRecord(
            monitor=monitors[i],
            final_state=FieldState(U[i], t[i]),
            stop_reason=stop_reason[i],
            stop_time=float(t[i]),
            qv_total=float(qv[i]),
            b_total=float(bacc[i]),
            n_steps=int(n_steps[i]),
            clamp_count=int(clamps[i]),
            min_value=float(U[i].min()),
            error=errors[i],
        )
        if series is not None:
            cols, pr = series[i]
            rec.t, rec.I, rec.sup_norm, rec.level, rec.qv_accum, rec.b_accum = cols
            rec.probes = pr
            rec.min_value = float(min(rec.min_value, *pr["min_value"])) if "min_value" in pr else rec.min_value
        records.append(rec)
    return records


def _assemble_series(chunks, P, probe_names):
    idx_all = np.concatenate([c[0] for c in chunks])
    order = np.argsort(idx_all, kind="stable")
    bounds = np.searchsorted(idx_all[order], np.arange(P + 1))
    cols = [np.concatenate([c[k] for c in chunks])[order] for k in range(1, 7)]
    pcols = {n: np.concatenate([c[7][n] for c in chunks])[order] for n in probe_names}
    out = []
    for i in range(P):
        sl = slice(bounds[i], bounds[i + 1])
        out.append(([c[sl] for c in cols], {n: v[sl] for n, v in pcols.items()}))
    return out


def run_trajectory(
    u0: FieldState,
    spec: CoefficientSpec,
    cfg: StepperConfig,
    noise: NoiseGrid,
    probes: Mapping[str, Callable] | None = None,
    stop_rules: Sequence = (),
    start_level: float | None = None,
    promote: bool = True,
) -> TrajectoryRecord:
    """Single trajectory with full series; step errors other than the
    resolution limit propagate as :class:`IntegrationError`."""
    rec = run_ensemble(
        u0, spec, cfg, [noise], probes=probes, stop_rules=stop_rules,
        record_series=True, start_level=start_level, promote=promote,
    )[0]
    if rec.error is not None:
        raise IntegrationError(rec.error, rec.final_state)
    return rec
