"""Self-contained verification suites run by ``explosive-she verify SUITE``.

Each suite returns ``{"suite", "passed", "checks": [...]}`` where every check
carries a name, the measured value, the tolerance or target and a pass flag.
"""

from __future__ import annotations

import math

import numpy as np

from .coefficients import CoefficientSpec
from .convolution import AdaptedField, BoundCheckParams, feasible_tripling_params, verify_lebesgue_bound, verify_stochastic_bound
from .functionals import (
    StoppingRule,
    drift_bound_threshold,
    drift_functional,
    drift_lower_bound_check,
    holder_chain_check,
    qv_and_lebesgue_budget_check,
)
from .heat_kernel import KernelEvaluator, eval_kernel, kernel_sup_bound, semigroup_check
from .integrator import FieldState, StepperConfig, make_initial_condition

TWO_PI = 2 * math.pi


def _check(name, passed, value=None, target=None):
    return {"name": name, "passed": bool(passed), "value": value, "target": target}


def kernel_mass(ke: KernelEvaluator, t: float, n_nodes: int = 4096) -> float:
    """``|int G(t, .) - 1|`` by the periodic trapezoid rule."""
    y = -math.pi + np.arange(n_nodes) * (TWO_PI / n_nodes)
    return abs(float(np.sum(eval_kernel(ke, t, y))) * TWO_PI / n_nodes - 1.0)


def suite_kernel(s):
    ke = KernelEvaluator()
    checks = [_check(f"mass t={t}", (m := kernel_mass(ke, t)) < 1e-10, m, 1e-10) for t in (0.01, 0.1, 1.0)]
    err = semigroup_check(ke, 0.1, 0.1, 0.3)
    checks.append(_check("semigroup (0.1, 0.1)", err < 1e-8, err, 1e-8))
    cg = kernel_sup_bound(ke, 1e-4, 1.0)
    checks.append(_check("C_G between 1/sqrt(4 pi) and 0.3", 1 / math.sqrt(4 * math.pi) <= cg < 0.3, cg))
    return checks


def _random_fields(rng, k, n_cells):
    x = -math.pi + (np.arange(n_cells) + 0.5) * (TWO_PI / n_cells)
    for _ in range(k):
        amp = rng.uniform(0.1, 5.0)
        c = rng.uniform(-math.pi, math.pi)
        w = rng.uniform(0.05, 1.0)
        yield amp * np.exp(-((np.angle(np.exp(1j * (x - c)))) ** 2) / (2 * w * w)) + rng.uniform(0, 1)


def suite_holder(s):
    checks = []
    spec = CoefficientSpec(2.0, 0.9)
    for c in (0.5, 1.0, 7.0):
        r = holder_chain_check(FieldState(np.full(64, c)), spec)
        rel = abs(r.scaled_int_b - r.I_pow_beta) / r.I_pow_beta
        checks.append(_check(f"equality on constant {c}", rel < 1e-10, rel, 1e-10))
    rng = np.random.default_rng(s["seed"])
    bad = sum(not holder_chain_check(FieldState(u), spec).passed for u in _random_fields(rng, 50, 128))
    checks.append(_check("random fields", bad == 0, bad, 0))
    spike = np.full(256, 1e-3)
    spike[128] = 100.0
    r = holder_chain_check(FieldState(spike), spec)
    checks.append(_check("spike strict with large ratio", r.scaled_int_b / r.I_pow_beta > 10, r.scaled_int_b / r.I_pow_beta))
    r = holder_chain_check(FieldState(spike), CoefficientSpec(2.0, 1.1))
    checks.append(_check("first inequality not asserted when 2 gamma > beta", not r.first_asserted))
    return checks


def suite_drift(s):
    checks = []
    A = drift_functional(FieldState(np.ones(64)), CoefficientSpec(2, 1), 1.0)
    exact = 1 / TWO_PI - 1 / TWO_PI**2
    checks.append(_check("u=1 closed form", abs(A - exact) < 1e-12, A, exact))
    A = drift_functional(FieldState(np.full(64, 100.0)), CoefficientSpec(2, 1.2), 1.0)
    checks.append(_check("u=100, 2 gamma < beta + 1: A > 0", A > 0, A))
    spec = CoefficientSpec(2, 0.9)
    r = drift_lower_bound_check(FieldState(np.full(64, 100.0)), spec, None, 0.01)
    checks.append(_check("u=100 (2, 0.9, delta 0.01) passes", r.passed and r.chain_holds, r.margin))
    C = drift_bound_threshold(spec, 0.01)
    r = drift_lower_bound_check(FieldState(np.full(64, 0.99 * C / TWO_PI)), spec, None, 0.01)
    checks.append(_check("just below threshold not passed", not r.passed, r.margin))
    rng = np.random.default_rng(s["seed"])
    bad = 0
    for u in _random_fields(rng, 50, 128):
        u = u * (2 * C / (u.sum() * TWO_PI / u.size)) * rng.uniform(1, 3)
        r = drift_lower_bound_check(FieldState(u), spec, None, 0.01)
        bad += not (r.chain_holds and r.passed)
    checks.append(_check("random fields with I >= 2C", bad == 0, bad, 0))
    return checks


def random_phi(rng, T, n_steps, n_cells):
    """Nonnegative field, piecewise constant on random time and space blocks."""
    nt = int(rng.integers(1, min(n_steps, 20) + 1))
    nx = int(rng.integers(1, min(n_cells, 32) + 1))
    blocks = rng.lognormal(0.0, 1.0, size=(nt, nx)) * (rng.random((nt, nx)) < 0.7)
    ti = np.minimum((np.arange(n_steps) * nt) // n_steps, nt - 1)
    xi = np.minimum((np.arange(n_cells) * nx) // n_cells, nx - 1)
    return AdaptedField(blocks[np.ix_(ti, xi)], T / n_steps)


def suite_lebesgue(s, n_fields=20):
    params = BoundCheckParams(p=2.0)
    checks = []
    r = verify_lebesgue_bound(AdaptedField.constant(1.0, 0.5, 125, 64), params)
    checks.append(_check("phi=1, T=0.5, p=2", r.passed, r.ratio))
    r = verify_lebesgue_bound(AdaptedField.constant(0.0, 0.5, 10, 64), params)
    checks.append(_check("phi=0", r.passed and r.lhs == 0 and r.rhs == 0))
    rng = np.random.default_rng(s["seed"])
    for T, n in ((0.1, 25), (1.0, 250)):
        reports = [verify_lebesgue_bound(random_phi(rng, T, n, 64), params) for _ in range(n_fields)]
        worst = min(rep.ratio for rep in reports)
        checks.append(_check(f"{n_fields} random fields T={T}", all(rep.passed for rep in reports), worst, 1.0))
    return checks


def suite_stochastic(s):
    spec = CoefficientSpec(s["beta"], s["gamma"])
    params = BoundCheckParams(p=6.5, theta=2.5, gamma=spec.gamma, beta=spec.beta)
    rep = verify_stochastic_bound(spec, params, s["paths"], master_seed=s["seed"])
    checks = [
        _check("exceedances nonincreasing in n", rep.decreasing, rep.exceedances),
        _check("conservative decay rate >= alpha", rep.rate_consistent is not False, rep.conservative_rate, params.alpha),
    ]
    ratios = list(rep.moment_ratio.values())
    checks.append(_check("moment ratio bounded across T", all(math.isfinite(v) for v in ratios)
                         and max(ratios) <= 10 * min(ratios), rep.moment_ratio))
    zero = verify_stochastic_bound(spec, params, 50, master_seed=s["seed"], field_scale=0.0)
    checks.append(_check("zero field never exceeds", sum(zero.exceedances) == 0, zero.exceedances))
    return checks


def suite_qv_budget(s):
    from .experiments import run_paths

    spec = CoefficientSpec(s["beta"], s["gamma"])
    M = s["m"]
    cfg = StepperConfig(dt_base=s["dt"], dt_safety=s["dt_safety"], u_explode=s["u_explode"], horizon=max(s["horizon"], 50.0))
    u0 = make_initial_condition("constant", s["cells"], value=s["u0"])
    recs = run_paths(u0, spec, cfg, s["paths"], s["seed"], stop_rules=[StoppingRule.l1_exceeds(M)], workers=s["workers"])
    rep = qv_and_lebesgue_budget_check(recs, M)
    return [
        _check("mean int int b <= M + 3 SE", rep.b_within, rep.b_mean, M),
        _check("mean int int sigma^2 <= M^2 + 3 SE", rep.qv_within, rep.qv_mean, M * M),
    ]


def suite_tripling_params(s):
    p = feasible_tripling_params(CoefficientSpec(s["beta"], s["gamma"]), theta=s["theta"])
    return [
        _check("feasible", p.feasible, p.to_dict()),
        _check("theta window", p.theta_window[0] < p.theta < p.theta_window[1] or p.theta == 1.0, p.theta),
        _check("eta window", p.eta_window[0] < p.eta < p.eta_window[1], p.eta),
        _check("n0 condition", (p.beta / 2) * 3.0 ** ((2 * p.gamma - p.beta) * p.theta * (p.n0 + 1) - p.eta * p.n0) < 1, p.n0),
        _check("x in (0, beta - 1)", 0 < p.x < p.beta - 1, p.x),
    ]


SUITE_FUNCS = {
    "kernel": suite_kernel,
    "holder": suite_holder,
    "drift": suite_drift,
    "lebesgue-bound": suite_lebesgue,
    "stochastic-bound": suite_stochastic,
    "qv-budget": suite_qv_budget,
    "tripling-params": suite_tripling_params,
}


def run_suite(name: str, settings: dict) -> dict:
    checks = SUITE_FUNCS[name](settings)
    return {"suite": name, "passed": all(c["passed"] for c in checks), "checks": checks}
