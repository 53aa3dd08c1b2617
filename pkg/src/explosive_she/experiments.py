"""Ensemble experiments: explosion probabilities, region sweeps, the
potential-corridor experiment in region A and the tripling chain in region B.

Path ``i`` of an experiment always uses the noise stream
``derive_stream(master_seed, i)``, and the engine treats every path as an
independent row, so results do not depend on batching or worker count.
Parallel runs split path indices into contiguous chunks and merge in index
order.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .coefficients import CoefficientSpec, Regime, classify, eval_b, eval_sigma
from .convolution import TriplingParams, feasible_tripling_params, wilson_interval
from .errors import ConfigError, PreconditionError
from .functionals import (
    StoppingRule,
    drift_bound_threshold,
    potential,
)
from .integrator import FieldState, StepperConfig, TrajectoryRecord, make_initial_condition, run_ensemble
from .noise import derive_seed, derive_stream

__all__ = [
    "ExplosionEstimate",
    "SweepCell",
    "RegionAReport",
    "LevelResult",
    "TriplingReport",
    "run_paths",
    "estimate_explosion_probability",
    "region_sweep",
    "write_sweep_csv",
    "region_a_experiment",
    "tripling_experiment",
    "threshold_sensitivity",
    "SWEEP_HEADER",
]

TWO_PI = 2 * math.pi
SWEEP_HEADER = ("beta", "gamma", "region", "p_hat", "ci_lo", "ci_hi", "n_paths")


# --------------------------------------------------------------------------
# path runner


def _run_chunk(args):
    (u0, spec, cfg, master_seed, start, stop, stop_rules, probes, record_series) = args
    n_cells = u0.n_cells
    streams = [derive_stream(master_seed, i, n_cells) for i in range(start, stop)]
    return run_ensemble(
        u0, spec, cfg, streams, probes=probes, stop_rules=stop_rules, record_series=record_series
    )


def run_paths(
    u0: FieldState,
    spec: CoefficientSpec,
    cfg: StepperConfig,
    n_paths: int,
    master_seed: int,
    stop_rules=(),
    probes=None,
    record_series: bool = False,
    workers: int = 1,
    chunk: int = 100,
    first_index: int = 0,
) -> list[TrajectoryRecord]:
    """Run paths ``first_index .. first_index + n_paths - 1`` and return them in index order.

    Probes must be picklable (module-level functions) when ``workers > 1``.
    """
    if n_paths < 1:
        raise PreconditionError("n_paths must be >= 1")
    bounds = list(range(first_index, first_index + n_paths, chunk)) + [first_index + n_paths]
    jobs = [
        (u0, spec, cfg, master_seed, a, b, tuple(stop_rules), probes, record_series)
        for a, b in zip(bounds, bounds[1:])
    ]
    if workers <= 1 or len(jobs) == 1:
        parts = [_run_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    return [r for part in parts for r in part]


# --------------------------------------------------------------------------
# explosion probability


@dataclass(frozen=True)
class ExplosionEstimate:
    beta: float
    gamma: float
    n_paths: int
    n_exploded: int
    p_hat: float
    ci: tuple[float, float]
    horizon: float
    u_explode: float
    dt: float
    n_cells: int
    n_resolution_limited: int = 0
    n_errors: int = 0

    def to_dict(self):
        d = asdict(self)
        d["ci"] = list(self.ci)
        return d


def _estimate(spec, records, cfg, n_cells):
    n = len(records)
    k = sum(r.exploded for r in records)
    return ExplosionEstimate(
        beta=spec.beta, gamma=spec.gamma, n_paths=n, n_exploded=k, p_hat=k / n,
        ci=wilson_interval(k, n), horizon=cfg.horizon, u_explode=cfg.u_explode,
        dt=cfg.dt_base, n_cells=n_cells,
        n_resolution_limited=sum(r.monitor.resolution_limited for r in records),
        n_errors=sum(r.error is not None for r in records),
    )


def estimate_explosion_probability(
    spec: CoefficientSpec,
    ic: FieldState,
    cfg: StepperConfig,
    n_paths: int,
    master_seed: int,
    workers: int = 1,
) -> ExplosionEstimate:
    """Fraction of ``n_paths`` trajectories declared exploded before ``cfg.horizon``."""
    records = run_paths(ic, spec, cfg, n_paths, master_seed, workers=workers)
    return _estimate(spec, records, cfg, ic.n_cells)


def threshold_sensitivity(
    spec: CoefficientSpec,
    ic: FieldState,
    cfg: StepperConfig,
    n_paths: int,
    master_seed: int,
    thresholds=(1e6, 1e8, 1e10),
    workers: int = 1,
) -> list[ExplosionEstimate]:
    """Explosion estimates at several declaration thresholds with common noise."""
    return [
        estimate_explosion_probability(spec, ic, replace(cfg, u_explode=float(u)), n_paths, master_seed, workers)
        for u in thresholds
    ]


# --------------------------------------------------------------------------
# region sweep


@dataclass(frozen=True)
class SweepCell:
    beta: float
    gamma: float
    region: Regime
    estimate: ExplosionEstimate | None
    error: str | None = None

    def csv_row(self):
        e = self.estimate
        if e is None:
            return (repr(self.beta), repr(self.gamma), self.region.value, "nan", "nan", "nan", "0")
        return (repr(self.beta), repr(self.gamma), self.region.value, repr(e.p_hat),
                repr(e.ci[0]), repr(e.ci[1]), str(e.n_paths))


def region_sweep(
    beta_grid,
    gamma_grid,
    ic: FieldState,
    cfg: StepperConfig,
    n_paths: int,
    master_seed: int,
    workers: int = 1,
) -> list[SweepCell]:
    """Explosion estimate and regime label per grid cell, row-major in ``beta``.

    Cell ``(i, j)`` uses master seed ``derive_seed(master_seed, i, j)``. A cell
    whose parameters are invalid or whose run fails is recorded with its error
    and the sweep continues.
    """
    cells = []
    for i, b in enumerate(beta_grid):
        for j, g in enumerate(gamma_grid):
            try:
                spec = CoefficientSpec(float(b), float(g))
                est = estimate_explosion_probability(spec, ic, cfg, n_paths, derive_seed(master_seed, i, j), workers)
                cells.append(SweepCell(spec.beta, spec.gamma, spec.regime, est))
            except (ValueError, RuntimeError) as exc:
                region = Regime.OTHER
                try:
                    region = classify(CoefficientSpec(float(b), float(g)))
                except ValueError:
                    pass
                cells.append(SweepCell(float(b), float(g), region, None, str(exc)))
    return cells


def write_sweep_csv(cells, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for c in cells:
            w.writerow(c.csv_row())


# --------------------------------------------------------------------------
# region A: potential corridor


class DriftProbe:
    """Picklable probe returning the drift density ``A`` per path."""

    def __init__(self, epsilon: float):
        self.epsilon = float(epsilon)

    def __call__(self, u, spec):
        dx = TWO_PI / u.shape[-1]
        I = u.sum(axis=-1) * dx
        ib = eval_b(spec, u).sum(axis=-1) * dx
        is2 = (eval_sigma(spec, u) ** 2).sum(axis=-1) * dx
        e = self.epsilon
        with np.errstate(divide="ignore", invalid="ignore"):
            return e * ib / I ** (e + 1) - e * (e + 1) * is2 / (2 * I ** (e + 2))


def _probe_I(u, spec):
    return u.sum(axis=-1) * (TWO_PI / u.shape[-1])


@dataclass
class RegionAReport:
    beta: float
    gamma: float
    delta: float
    epsilon: float
    T: float
    I0: float
    upper: float
    delta_feasible: bool
    threshold: float | None = None
    n_paths: int = 0
    n_up: int = 0
    n_exploded: int = 0
    n_down: int = 0
    n_censored: int = 0
    success_frequency: float | None = None
    success_se: float | None = None
    success_ci: tuple[float, float] | None = None
    analytic_bound: float | None = None
    mean_stop_time: float | None = None
    stop_time_se: float | None = None
    stop_time_budget: float | None = None
    drift_checked_probes: int = 0
    drift_violations: int = 0
    min_drift_margin: float | None = None
    note: str = ""

    @property
    def bound_consistent(self) -> bool | None:
        if self.success_frequency is None or self.analytic_bound is None:
            return None
        return self.success_frequency >= self.analytic_bound - 3 * self.success_se

    def to_dict(self):
        d = asdict(self)
        d["bound_consistent"] = self.bound_consistent
        if self.success_ci is not None:
            d["success_ci"] = list(self.success_ci)
        return d


def region_a_experiment(
    spec: CoefficientSpec,
    delta: float,
    T: float,
    n_paths: int,
    cfg: StepperConfig | None = None,
    n_cells: int = 256,
    I0: float | None = None,
    upper: float | None = None,
    master_seed: int = 0,
    workers: int = 1,
) -> RegionAReport:
    """Exit of ``I`` from the corridor ``(C, upper)`` under the region-A drift bound.

    ``C`` is the explicit threshold of :func:`drift_bound_threshold` with
    ``epsilon = beta - 1``. Paths start from the constant field with
    ``I(0) = I0`` (default ``10 C``) and stop when ``I <= C``, ``I >= upper``
    (default ``2 pi u_explode``), on explosion or at time ``T``.

    The report compares the frequency of {upward exit or explosion before
    ``T``} with ``V(I0) - V(C) - 1/(delta T)``, and the mean of ``stop ^ T``
    with the budget ``1/delta``. Along every path the drift density is
    checked against ``delta`` at each probe with ``I >= C``.

    When ``delta`` exceeds what the drift bound can supply the report is
    flagged ``delta_feasible=False`` and no paths are run.
    """
    if not (spec.beta > 1 and 2 * spec.gamma <= spec.beta):
        raise ConfigError(f"region A experiment needs beta > 1 and 2*gamma <= beta (got {spec.beta}, {spec.gamma})")
    if not (T > 0 and n_paths >= 1):
        raise ConfigError("need T > 0 and n_paths >= 1")
    eps = spec.beta - 1
    cfg = replace(cfg or StepperConfig(), horizon=float(T))
    upper = TWO_PI * cfg.u_explode if upper is None else float(upper)
    base = RegionAReport(spec.beta, spec.gamma, float(delta), eps, float(T), math.nan, upper, False)
    try:
        C = drift_bound_threshold(spec, delta, eps)
    except PreconditionError as exc:
        base.note = f"drift bound cannot supply delta: {exc}"
        return base
    I0 = 10 * C if I0 is None else float(I0)
    if not C < I0 < upper:
        raise ConfigError(f"need C < I0 < upper (C={C!r}, I0={I0!r}, upper={upper!r})")
    base.I0 = I0
    base.delta_feasible = True
    base.threshold = C
    u0 = make_initial_condition("constant", n_cells, value=I0 / TWO_PI)
    rule = StoppingRule.corridor(lower=C, upper=upper)
    probes = {"I": _probe_I, "A": DriftProbe(eps)}
    records = run_paths(u0, spec, cfg, n_paths, master_seed, stop_rules=[rule], probes=probes,
                        record_series=True, workers=workers)
    succ = np.array([r.stop_reason == "up" or r.exploded for r in records], dtype=float)
    tau = np.array([min(r.stop_time, T) for r in records])
    checked = violations = 0
    min_margin = math.inf
    for r in records:
        mask = r.probes["I"] >= C
        checked += int(mask.sum())
        if mask.any():
            margins = r.probes["A"][mask] - delta
            violations += int(np.count_nonzero(margins < 0))
            min_margin = min(min_margin, float(margins.min()))
    n = len(records)
    k = int(succ.sum())
    base.n_paths = n
    base.n_up = sum(r.stop_reason == "up" for r in records)
    base.n_exploded = sum(r.exploded for r in records)
    base.n_down = sum(r.stop_reason == "down" for r in records)
    base.n_censored = sum(r.censored for r in records)
    base.success_frequency = k / n
    base.success_se = float(succ.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    base.success_ci = wilson_interval(k, n)
    base.analytic_bound = potential(I0, eps) - potential(C, eps) - 1 / (delta * T)
    base.mean_stop_time = float(tau.mean())
    base.stop_time_se = float(tau.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    base.stop_time_budget = 1 / delta
    base.drift_checked_probes = checked
    base.drift_violations = violations
    base.min_drift_margin = None if checked == 0 else min_margin
    return base


# --------------------------------------------------------------------------
# region B: tripling chain


@dataclass(frozen=True)
class LevelResult:
    n: int
    attempts: int
    successes: int
    frequency: float
    ci: tuple[float, float]
    T_n: float
    n_down: int
    n_sup: int
    n_timeout: int

    def to_dict(self):
        d = asdict(self)
        d["ci"] = list(self.ci)
        return d


@dataclass
class TriplingReport:
    params: TriplingParams
    per_level: list[LevelResult] = field(default_factory=list)
    chain_completion_fraction: float = 0.0
    trend_ok: bool | None = None
    trend_detail: str = ""

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "per_level": [lv.to_dict() for lv in self.per_level],
            "chain_completion_fraction": self.chain_completion_fraction,
            "trend_ok": self.trend_ok,
            "trend_detail": self.trend_detail,
        }


def tripling_experiment(
    spec: CoefficientSpec,
    params: TriplingParams | None,
    attempts_per_level: int,
    max_level: int | None = None,
    cfg: StepperConfig | None = None,
    n_cells: int = 256,
    master_seed: int = 0,
    workers: int = 1,
) -> TriplingReport:
    """Per-level tripling frequencies with fresh starts at every level.

    Level ``n`` starts from ``paper_profile(n, theta)`` (``I(0) = 3^n``) and
    succeeds when ``I`` exceeds ``3^(n+1)`` before ``T_n = 3^(-n x)``, before
    ``I <= 3^(eta n)`` and before the sup-norm exceeds ``3^((n+1) theta)``.
    Explosion before the upward exit can only happen through the sup-norm
    cap, so it counts as a failure. Level ``n`` uses master seed
    ``derive_seed(master_seed, n)``.

    The trend check asks for ``freq(n0+2) >= freq(n0) - 3 SE`` of the
    difference; the chain estimate is the product of per-level frequencies.
    """
    params = feasible_tripling_params(spec) if params is None else params
    if not params.feasible:
        raise ConfigError(f"infeasible tripling parameters: {params.reason}")
    if attempts_per_level < 1:
        raise ConfigError("attempts_per_level must be >= 1")
    n0 = params.n0
    max_level = n0 + 3 if max_level is None else int(max_level)
    if max_level < n0:
        raise ConfigError("max_level must be >= n0")
    cfg = cfg or StepperConfig()
    report = TriplingReport(params)
    for n in range(n0, max_level + 1):
        Tn = params.level_time(n)
        lcfg = replace(cfg, horizon=Tn)
        u0 = make_initial_condition("paper_profile", n_cells, n0=n, theta=params.theta)
        rule = StoppingRule.corridor(
            lower=3.0 ** (params.eta * n), upper=3.0 ** (n + 1), sup_cap=3.0 ** ((n + 1) * params.theta)
        )
        recs = run_paths(u0, spec, lcfg, attempts_per_level, derive_seed(master_seed, n),
                         stop_rules=[rule], workers=workers)
        k = sum(r.stop_reason == "up" for r in recs)
        report.per_level.append(LevelResult(
            n=n, attempts=len(recs), successes=k, frequency=k / len(recs), ci=wilson_interval(k, len(recs)),
            T_n=Tn,
            n_down=sum(r.stop_reason == "down" for r in recs),
            n_sup=sum(r.stop_reason in ("sup", "exploded") for r in recs),
            n_timeout=sum(r.censored for r in recs),
        ))
    report.chain_completion_fraction = float(np.prod([lv.frequency for lv in report.per_level]))
    if len(report.per_level) >= 3:
        a, c = report.per_level[0], report.per_level[2]
        se = math.sqrt(a.frequency * (1 - a.frequency) / a.attempts + c.frequency * (1 - c.frequency) / c.attempts)
        report.trend_ok = c.frequency >= a.frequency - 3 * se
        report.trend_detail = (
            f"freq(n0+2)={c.frequency!r} vs freq(n0)={a.frequency!r}, 3*SE of difference={3 * se!r}"
        )
    return report
