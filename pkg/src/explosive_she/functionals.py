"""Norm functionals, stopping rules and the Ito-drift bookkeeping of ``I(t)``.

``I(t) = int u(t, x) dx`` is a nonnegative local submartingale. By the Ito
formula, ``V(I) = 1 - I**(-eps)`` has drift density

    A = int( eps * b(u) / I**(eps+1) - eps*(eps+1) * sigma(u)**2 / (2 I**(eps+2)) ) dx

and the Hölder inequalities on the ``2 pi``-periodic domain

    int sigma(u)^2 <= (2 pi)^((beta-2gamma)/beta) (int u^beta)^(2gamma/beta)   (2 gamma <= beta)
    (2 pi)^(beta-1) int u^beta >= I^beta                                       (beta > 1)

give the explicit lower bound used in :func:`drift_lower_bound_check`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .coefficients import CoefficientSpec, eval_b, eval_sigma
from .errors import DomainError, PreconditionError
from .integrator import FieldState, TrajectoryRecord

__all__ = [
    "NormTracker",
    "StoppingRule",
    "PotentialTracker",
    "DriftBoundReport",
    "HolderReport",
    "BudgetReport",
    "compute_norms",
    "drift_functional",
    "drift_bound_threshold",
    "drift_lower_bound",
    "drift_lower_bound_check",
    "holder_chain_check",
    "potential_update",
    "qv_and_lebesgue_budget_check",
    "trajectory_budgets",
    "norm_probes",
    "holder_probes",
    "potential",
]

TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class NormTracker:
    I: float
    sup_norm: float
    L_beta: float
    L_2gamma: float
    qv_accum: float = 0.0


def _lp(values, p, dx):
    if p == 0:
        return TWO_PI
    return float(np.sum(values**p) * dx) ** (1.0 / p)


def compute_norms(state: FieldState, spec: CoefficientSpec, qv_accum: float = 0.0) -> NormTracker:
    """Midpoint-rule ``L1``, ``L_inf``, ``L_beta`` and ``L_{2 gamma}`` norms."""
    u, dx = state.values, state.dx
    return NormTracker(
        I=float(np.sum(u) * dx),
        sup_norm=float(u.max()),
        L_beta=_lp(u, spec.beta, dx),
        L_2gamma=_lp(u, 2 * spec.gamma, dx),
        qv_accum=float(qv_accum),
    )


# --------------------------------------------------------------------------
# stopping rules

_CONTINUE, _UP, _DOWN, _SUP = 0, 1, 2, 3


@dataclass(frozen=True)
class StoppingRule:
    """Exit condition on ``(I, sup_norm)`` checked after every step.

    ``upper`` stops when ``I > upper``, ``lower`` when ``I <= lower`` and
    ``sup_cap`` when the sup-norm exceeds it. When several conditions hold at
    the same probe the reported reason is ``sup``, then ``down``, then ``up``:
    the order between simultaneous crossings is not observable on the grid,
    and this choice never overstates an upward exit.
    """

    kind: str
    upper: float = math.inf
    lower: float = -math.inf
    sup_cap: float = math.inf

    @classmethod
    def l1_exceeds(cls, M: float) -> "StoppingRule":
        return cls("l1_exceeds", upper=float(M))

    @classmethod
    def corridor(cls, lower: float, upper: float, sup_cap: float = math.inf) -> "StoppingRule":
        if not lower < upper:
            raise DomainError("corridor needs lower < upper")
        return cls("corridor", upper=float(upper), lower=float(lower), sup_cap=float(sup_cap))

    @classmethod
    def sup_exceeds(cls, n: float) -> "StoppingRule":
        return cls("sup_exceeds", sup_cap=float(n))

    def codes(self, I, sup):
        I = np.asarray(I, dtype=float)
        sup = np.asarray(sup, dtype=float)
        out = np.where(I > self.upper, _UP, _CONTINUE)
        out = np.where(I <= self.lower, _DOWN, out)
        return np.where(sup > self.sup_cap, _SUP, out)

    def first_hit(self, t, I, sup):
        """``(hit_time, hit_reason)`` of the first probe meeting the rule, or ``(None, None)``."""
        c = self.codes(I, sup)
        hits = np.flatnonzero(c)
        if hits.size == 0:
            return None, None
        j = hits[0]
        return float(np.asarray(t)[j]), {_UP: "up", _DOWN: "down", _SUP: "sup"}[int(c[j])]


# --------------------------------------------------------------------------
# probes for run_trajectory / run_ensemble (act on (paths, cells) arrays)


def _probe_I(u, spec):
    return u.sum(axis=-1) * (TWO_PI / u.shape[-1])


def _probe_sup(u, spec):
    return u.max(axis=-1)


def _probe_min(u, spec):
    return u.min(axis=-1)


def _probe_int_b(u, spec):
    return eval_b(spec, u).sum(axis=-1) * (TWO_PI / u.shape[-1])


def _probe_int_sigma2(u, spec):
    return (eval_sigma(spec, u) ** 2).sum(axis=-1) * (TWO_PI / u.shape[-1])


def _holder_terms(u, spec):
    dx = TWO_PI / u.shape[-1]
    b, g = spec.beta, spec.gamma
    power = CoefficientSpec(b, g)
    s2 = (eval_sigma(power, u) ** 2).sum(axis=-1) * dx
    J = eval_b(power, u).sum(axis=-1) * dx
    I = u.sum(axis=-1) * dx
    return s2, TWO_PI ** ((b - 2 * g) / b) * J ** (2 * g / b), TWO_PI ** (b - 1) * J, I**b


def _probe_holder_first(u, spec):
    s2, rhs, _, _ = _holder_terms(u, spec)
    return rhs - s2


def _probe_holder_second(u, spec):
    _, _, lhs, rhs = _holder_terms(u, spec)
    return lhs - rhs


def _probe_holder_scale(u, spec):
    s2, rhs1, lhs2, rhs2 = _holder_terms(u, spec)
    return np.maximum(np.maximum(s2, rhs1), np.maximum(lhs2, rhs2))


def holder_probes() -> dict:
    """Per-step slacks of the two Hölder comparisons (nonnegative when they hold)
    and the magnitude of the compared terms, for rounding tolerances."""
    return {
        "holder_first_slack": _probe_holder_first,
        "holder_second_slack": _probe_holder_second,
        "holder_scale": _probe_holder_scale,
    }


def norm_probes() -> dict:
    """Probes recording ``min_value``, ``int_b`` and ``int_sigma2`` per step."""
    return {"min_value": _probe_min, "int_b": _probe_int_b, "int_sigma2": _probe_int_sigma2}


# --------------------------------------------------------------------------
# drift functional and its lower bound


def _as_values(state):
    return state.values if isinstance(state, FieldState) else np.asarray(state, dtype=float)


def drift_functional(state: FieldState, spec: CoefficientSpec, epsilon: float) -> float:
    """Ito drift density ``A`` of ``V(I) = 1 - I**(-epsilon)`` at ``state``."""
    u = _as_values(state)
    dx = TWO_PI / u.size
    I = float(np.sum(u) * dx)
    if not I > 0:
        raise DomainError("drift functional needs I > 0")
    int_b = float(np.sum(eval_b(spec, u)) * dx)
    int_s2 = float(np.sum(eval_sigma(spec, u) ** 2) * dx)
    return epsilon * int_b / I ** (epsilon + 1) - epsilon * (epsilon + 1) * int_s2 / (2 * I ** (epsilon + 2))


def _require_region_a(spec, epsilon):
    if not (spec.beta > 1 and 2 * spec.gamma <= spec.beta):
        raise PreconditionError(f"needs beta > 1 and 2*gamma <= beta (got beta={spec.beta}, gamma={spec.gamma})")
    if not epsilon > 0:
        raise PreconditionError("epsilon must be positive")


def drift_lower_bound(spec: CoefficientSpec, epsilon: float, I: float) -> float:
    """Closed-form lower bound on ``A`` given only ``I``:

    ``(2pi)^(1-beta) eps (1 - (2pi)^(beta-2gamma) (eps+1) / (2 I^(beta+1-2gamma))) I^(beta-eps-1)``.
    """
    _require_region_a(spec, epsilon)
    b, g = spec.beta, spec.gamma
    bracket = 1 - TWO_PI ** (b - 2 * g) * (epsilon + 1) / (2 * I ** (b + 1 - 2 * g))
    return TWO_PI ** (1 - b) * epsilon * bracket * I ** (b - epsilon - 1)


def drift_bound_threshold(spec: CoefficientSpec, delta: float, epsilon: float | None = None) -> float:
    """Smallest ``I`` with ``drift_lower_bound >= delta`` for ``epsilon = beta - 1``.

    With that choice ``I^(beta-eps-1) = 1`` and the condition reads
    ``1 - c / I^a >= r`` where ``c = (2pi)^(beta-2gamma) (eps+1)/2``,
    ``a = beta + 1 - 2 gamma`` and ``r = delta (2pi)^(beta-1) / eps``.
    """
    eps = spec.beta - 1 if epsilon is None else epsilon
    _require_region_a(spec, eps)
    if not math.isclose(eps, spec.beta - 1, rel_tol=0, abs_tol=1e-12):
        raise PreconditionError("the explicit threshold is derived for epsilon = beta - 1")
    b, g = spec.beta, spec.gamma
    r = delta * TWO_PI ** (b - 1) / eps
    if not (0 < r < 1):
        raise PreconditionError(
            f"delta must lie in (0, (2pi)^(1-beta) * eps) = (0, {TWO_PI ** (1 - b) * eps:.6g})"
        )
    c = TWO_PI ** (b - 2 * g) * (eps + 1) / 2
    return (c / (1 - r)) ** (1 / (b + 1 - 2 * g))


@dataclass(frozen=True)
class DriftBoundReport:
    I: float
    A: float
    holder_bound: float
    closed_form_bound: float
    threshold: float
    chain_holds: bool
    above_threshold: bool
    passed: bool
    margin: float
    A_margin: float

    def to_dict(self):
        return asdict(self)


def drift_lower_bound_check(
    state: FieldState, spec: CoefficientSpec, epsilon: float | None, delta: float
) -> DriftBoundReport:
    """Check the chain ``A >= Hölder bound >= closed-form bound`` and ``A >= delta``.

    The Hölder bound replaces ``int sigma^2`` by its Hölder majorant, written
    in terms of ``J = int u^beta``:
    ``eps J / I^(eps+1) * (1 - (eps+1)(2pi)^((beta-2g)/beta) J^(2g/beta - 1) / (2 I))``.
    The second link substitutes ``J >= J_min = (2pi)^(1-beta) I^beta``. The
    Hölder bound is convex in ``J`` and nondecreasing from ``J_min`` on when the
    closed-form bracket is nonnegative, so ``chain_holds`` asserts that link
    only there.

    ``passed`` is ``A >= delta`` when ``I >= threshold`` and is ``False`` below
    the threshold. ``margin`` is ``closed_form_bound - delta``, which changes
    sign exactly at the threshold; ``A_margin`` is ``A - delta``.
    """
    eps = spec.beta - 1 if epsilon is None else epsilon
    _require_region_a(spec, eps)
    C = drift_bound_threshold(spec, delta, eps)
    u = _as_values(state)
    dx = TWO_PI / u.size
    b, g = spec.beta, spec.gamma
    I = float(np.sum(u) * dx)
    A = drift_functional(u, spec, eps)
    J = float(np.sum(eval_b(spec, u)) * dx)
    bracket = 1 - (eps + 1) * TWO_PI ** ((b - 2 * g) / b) * J ** (2 * g / b - 1) / (2 * I)
    holder = eps * J / I ** (eps + 1) * bracket
    closed = drift_lower_bound(spec, eps, I)
    tol = 1e-12 * max(1.0, abs(A))
    chain = A >= holder - tol
    closed_bracket = 1 - TWO_PI ** (b - 2 * g) * (eps + 1) / (2 * I ** (b + 1 - 2 * g))
    if closed_bracket >= 0:
        chain = chain and holder >= closed - tol
    above = I >= C
    return DriftBoundReport(
        I=I, A=A, holder_bound=holder, closed_form_bound=closed, threshold=C,
        chain_holds=bool(chain), above_threshold=bool(above),
        passed=bool(above and A >= delta), margin=closed - delta, A_margin=A - delta,
    )


# --------------------------------------------------------------------------
# Hölder chain


@dataclass(frozen=True)
class HolderReport:
    int_sigma2: float
    holder_rhs: float
    scaled_int_b: float
    I_pow_beta: float
    first_asserted: bool
    second_asserted: bool
    first_holds: bool | None
    second_holds: bool | None

    @property
    def passed(self) -> bool:
        return self.first_holds is not False and self.second_holds is not False

    def to_dict(self):
        return asdict(self)


def holder_chain_check(state: FieldState, spec: CoefficientSpec, rtol: float = 1e-12) -> HolderReport:
    """The two Hölder comparisons; each is asserted only inside its hypothesis.

    The discrete (midpoint) versions hold exactly on the uniform grid, so the
    only slack is ``rtol`` for rounding.
    """
    u = _as_values(state)
    dx = TWO_PI / u.size
    b, g = spec.beta, spec.gamma
    s2 = float(np.sum(np.asarray(eval_sigma(CoefficientSpec(b, g), u)) ** 2) * dx)
    J = float(np.sum(np.asarray(eval_b(CoefficientSpec(b, g), u))) * dx)
    I = float(np.sum(u) * dx)
    rhs1 = TWO_PI ** ((b - 2 * g) / b) * J ** (2 * g / b) if b > 0 else math.inf
    lhs2 = TWO_PI ** (b - 1) * J
    rhs2 = I**b
    # for gamma < 1, sigma = min(u, u^gamma) <= u^gamma, so the bound still applies
    first = b > 1 and 2 * g <= b
    second = b > 1
    return HolderReport(
        int_sigma2=s2,
        holder_rhs=rhs1,
        scaled_int_b=lhs2,
        I_pow_beta=rhs2,
        first_asserted=first,
        second_asserted=second,
        first_holds=(s2 <= rhs1 * (1 + rtol) + 1e-300) if first else None,
        second_holds=(lhs2 >= rhs2 * (1 - rtol)) if second else None,
    )


# --------------------------------------------------------------------------
# potential


@dataclass(frozen=True)
class PotentialTracker:
    epsilon: float
    V: float = 0.0
    I: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")


def potential(I, epsilon: float):
    I = np.asarray(I, dtype=float)
    if np.any(I <= 0):
        raise DomainError("potential needs I > 0")
    out = 1.0 - I ** (-epsilon)
    return float(out) if out.ndim == 0 else out


def potential_update(pt: PotentialTracker, I_new: float) -> PotentialTracker:
    if not I_new > 0:
        raise DomainError(f"I must be positive (got {I_new!r})")
    return PotentialTracker(pt.epsilon, potential(I_new, pt.epsilon), float(I_new))


# --------------------------------------------------------------------------
# budgets


def trajectory_budgets(record: TrajectoryRecord) -> tuple[float, float]:
    """``(int int b(u), int int sigma(u)^2)`` accumulated up to the record's stop."""
    return record.b_total, record.qv_total


@dataclass(frozen=True)
class BudgetReport:
    M: float
    n_paths: int
    b_mean: float
    b_se: float
    qv_mean: float
    qv_se: float
    b_within: bool
    qv_within: bool
    n_stopped_up: int
    n_exploded: int
    n_censored: int

    @property
    def passed(self) -> bool:
        return self.b_within and self.qv_within

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def qv_and_lebesgue_budget_check(records, M: float, n_se: float = 3.0) -> BudgetReport:
    """Ensemble means of the drift and quadratic-variation budgets against ``M`` and ``M**2``.

    ``records`` is a sequence of trajectory records run with
    ``StoppingRule.l1_exceeds(M)``; a single record is accepted as well.
    """
    if isinstance(records, TrajectoryRecord):
        records = [records]
    bs = [r.b_total for r in records]
    qs = [r.qv_total for r in records]
    bm, bse = _mean_se(bs)
    qm, qse = _mean_se(qs)
    return BudgetReport(
        M=float(M), n_paths=len(records),
        b_mean=bm, b_se=bse, qv_mean=qm, qv_se=qse,
        b_within=bm <= M + n_se * bse, qv_within=qm <= M * M + n_se * qse,
        n_stopped_up=sum(r.stop_reason == "up" for r in records),
        n_exploded=sum(r.exploded for r in records),
        n_censored=sum(r.censored for r in records),
    )
