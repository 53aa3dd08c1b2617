import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from explosive_she.coefficients import CoefficientSpec
from explosive_she.convolution import (
    AdaptedField,
    BoundCheckParams,
    feasible_tripling_params,
    ito_variance_series,
    lebesgue_convolution,
    lebesgue_convolution_grid,
    stochastic_convolution,
    stochastic_convolution_grid,
    verify_lebesgue_bound,
    verify_stochastic_bound,
    wilson_interval,
)
from explosive_she.errors import DomainError, PreconditionError
from explosive_she.heat_kernel import KernelEvaluator
from explosive_she.noise import NoiseGrid, derive_stream
from explosive_she.verify import random_phi

ke = KernelEvaluator()


def test_lebesgue_constant_and_zero():
    phi = AdaptedField.constant(3.0, 0.8, 40, 32)
    Y = lebesgue_convolution_grid(phi, ke)
    np.testing.assert_allclose(Y, np.broadcast_to(3.0 * phi.times[:, None], Y.shape), atol=1e-12)
    assert lebesgue_convolution(phi, ke, 0.55, 1.0) == pytest.approx(3 * 0.55, abs=1e-6)
    assert np.all(lebesgue_convolution_grid(AdaptedField.constant(0.0, 0.5, 10, 16)) == 0)


@pytest.mark.parametrize("T,n", [(1.0, 250), (0.1, 25)])
def test_lebesgue_cos_mode(T, n, grid_x):
    phi = AdaptedField.from_function(lambda s, x: np.cos(x) + 0 * s, T, n, 64)
    Y = lebesgue_convolution_grid(phi, ke)
    np.testing.assert_allclose(Y[-1], np.cos(grid_x(64)) * (1 - math.exp(-T)), atol=1e-5)
    for x in (0.3, -2.0):
        assert lebesgue_convolution(phi, ke, T, x) == pytest.approx(math.cos(x) * (1 - math.exp(-T)), abs=1e-5)


def test_pointwise_matches_grid(grid_x):
    rng = np.random.default_rng(3)
    phi = random_phi(rng, 0.5, 50, 32)
    Y = lebesgue_convolution_grid(phi, ke)
    x = grid_x(32)
    for r, i in ((10, 4), (49, 17)):
        assert lebesgue_convolution(phi, ke, phi.times[r], x[i]) == pytest.approx(Y[r, i], rel=1e-10, abs=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.0, 3.0))
def test_lebesgue_linear_and_monotone(seed, a):
    rng = np.random.default_rng(seed)
    phi1 = random_phi(rng, 0.3, 30, 16)
    extra = AdaptedField(rng.random(phi1.samples.shape), phi1.dt)
    phi2 = AdaptedField(phi1.samples + extra.samples, phi1.dt)
    Y1 = lebesgue_convolution_grid(phi1, ke)
    np.testing.assert_allclose(lebesgue_convolution_grid(phi1.scaled(a), ke), a * Y1, rtol=1e-12, atol=1e-14)
    assert np.all(lebesgue_convolution_grid(phi2, ke) >= Y1 - 1e-13)


def test_stochastic_zero_and_linear():
    phi = AdaptedField.constant(0.0, 0.5, 20, 32)
    assert np.all(stochastic_convolution_grid(phi, NoiseGrid(32, 1)) == 0)
    rng = np.random.default_rng(5)
    phi = random_phi(rng, 0.5, 20, 32)
    z1 = stochastic_convolution_grid(phi, NoiseGrid(32, 1))
    z2 = stochastic_convolution_grid(phi.scaled(2.5), NoiseGrid(32, 1))
    np.testing.assert_allclose(z2, 2.5 * z1, rtol=1e-12, atol=1e-13)


def test_stochastic_pointwise_interpolates(grid_x):
    phi = AdaptedField.constant(1.0, 0.2, 10, 32)
    z = stochastic_convolution_grid(phi, NoiseGrid(32, 9))
    x = grid_x(32)
    assert stochastic_convolution(phi, ke, NoiseGrid(32, 9), 0.2, x[7]) == pytest.approx(z[-1, 7], abs=1e-12)
    with pytest.raises(DomainError):
        stochastic_convolution(phi, ke, NoiseGrid(32, 9), 0.205, 0.0)


def test_ito_series():
    assert ito_variance_series(0.5) == pytest.approx(0.28209609, abs=1e-8)
    assert ito_variance_series(0.5, 100000) == pytest.approx(ito_variance_series(0.5), abs=1e-5)


def test_ito_isometry_nonconstant():
    # deterministic phi(s, y) = 1 + 0.5 cos(y): empirical variance at one cell against the
    # variance of the linear map from increments to Z
    N, T, n = 32, 0.3, 15
    phi = AdaptedField.from_function(lambda s, x: 1 + 0.5 * np.cos(x) + 0 * s, T, n, N)
    reps = 4000
    dW = np.stack([derive_stream(17, i, N).sample_block(phi.dt, n) for i in range(reps)])
    from explosive_she.convolution import _spectral_paths

    z = _spectral_paths(phi.samples, dW, phi.dt)[:, -1, 5]
    # exact variance of the scheme: Z at cell 5 is linear in the cell increments,
    # so its variance is sum_j sum_i row_j[i]^2 * dt * dx
    k = np.fft.rfftfreq(N, 1 / N)
    decay = np.exp(-(k**2) * phi.dt)
    scale = np.ones_like(k)
    scale[1:] = np.sqrt(-np.expm1(-2 * k[1:] ** 2 * phi.dt) / (2 * k[1:] ** 2 * phi.dt))
    var = 0.0
    for j in range(n):
        mult = decay ** (n - 1 - j) * scale
        # row of the linear map dW_j -> Z at cell 5
        basis = np.eye(N) * phi.samples[j]
        row = np.fft.irfft(np.fft.rfft(basis, axis=1) * mult, n=N, axis=1)[:, 5] * (N / (2 * math.pi))
        var += np.sum(row**2) * phi.dt * phi.dx
    emp = z.var(ddof=1)
    se = math.sqrt((np.mean((z - z.mean()) ** 4) - emp**2) / reps)
    assert abs(emp - var) < 3 * se


def test_bound_params():
    p = BoundCheckParams(p=6.5, theta=2.5, gamma=1.1, beta=2.0)
    assert p.alpha == pytest.approx(-(2.5 * (4.5 * 1.1 - 6.5) + 2))
    assert p.alpha > 0 and p.stochastic_usable
    assert p.delta == pytest.approx(-(2.5 * (5.5 * 2 - 6.5) + 1))
    assert p.K_p == pytest.approx(p.C_G * (11 / 10) ** 5.5)
    assert not BoundCheckParams(p=6.0, theta=2.5, gamma=1.1).stochastic_usable
    with pytest.raises(PreconditionError):
        BoundCheckParams(p=1.5).K_p


@settings(max_examples=200, deadline=None)
@given(st.floats(1.6, 12.0), st.floats(1.0, 6.0), st.floats(0.0, 2.0), st.floats(1.0, 3.0))
def test_alpha_delta_sign_definitions(p, theta, gamma, beta):
    bp = BoundCheckParams(p=p, theta=theta, gamma=gamma, beta=beta, C_G=0.3)
    assert (bp.alpha > 0) == (theta * ((p - 2) * gamma - p) + 2 < 0)
    assert (bp.delta > 0) == (theta * ((p - 1) * beta - p) + 1 < 0)


def test_lebesgue_bound_examples():
    params = BoundCheckParams(p=2.0)
    rep = verify_lebesgue_bound(AdaptedField.constant(1.0, 0.5, 125, 64), params)
    assert rep.passed and rep.ratio > 1
    rep = verify_lebesgue_bound(AdaptedField.constant(0.0, 0.5, 10, 64), params)
    assert rep.passed and rep.lhs == 0 and rep.to_dict()["ratio"] is None
    with pytest.raises(PreconditionError):
        verify_lebesgue_bound(AdaptedField.constant(1.0, 0.5, 10, 16), BoundCheckParams(p=1.4))


def test_stochastic_bound_small():
    spec = CoefficientSpec(2, 1.1)
    params = BoundCheckParams(p=6.5, theta=2.5, gamma=1.1, beta=2.0)
    rep = verify_stochastic_bound(spec, params, 300, n_cells=64, n_steps=50)
    assert rep.decreasing
    assert all(0 <= lo <= p <= hi <= 1 for p, (lo, hi) in zip(rep.p_hat, rep.ci))
    zero = verify_stochastic_bound(spec, params, 20, n_cells=32, n_steps=10, field_scale=0.0)
    assert zero.exceedances == [0, 0, 0]
    with pytest.raises(PreconditionError):
        verify_stochastic_bound(spec, BoundCheckParams(p=6.0, theta=2.5, gamma=1.1), 10)
    with pytest.raises(PreconditionError):
        verify_stochastic_bound(spec, BoundCheckParams(p=6.5, theta=0.5, gamma=1.1), 10)


def test_tripling_params_reference():
    p = feasible_tripling_params(CoefficientSpec(2, 1.1))
    assert (p.theta, p.eta, p.n0, p.x) == (2.5, 0.75, 3, 0.5)
    assert p.theta_window == (2.0, 5.0)
    manual = feasible_tripling_params(CoefficientSpec(2, 1.1), theta=3.5)
    assert manual.feasible and manual.eta == pytest.approx(0.85) and manual.n0 == 5
    bad = feasible_tripling_params(CoefficientSpec(2, 1.1), theta=5.5)
    assert not bad.feasible and bad.reason
    narrow = feasible_tripling_params(CoefficientSpec(2, 1.24))
    assert narrow.feasible
    assert narrow.theta_window[0] == 2.0 and narrow.theta_window[1] == pytest.approx(1 / 0.48)
    with pytest.raises(PreconditionError):
        feasible_tripling_params(CoefficientSpec(3, 0.5))


@settings(max_examples=100, deadline=None)
@given(st.floats(1.05, 2.95), st.floats(0.01, 0.99))
def test_tripling_params_satisfy_inequalities(beta, frac):
    gamma = beta / 2 + frac * ((beta + 3) / 4 - beta / 2)
    p = feasible_tripling_params(CoefficientSpec(beta, gamma))
    if not p.feasible:
        return
    d = 2 * p.gamma - p.beta
    assert p.theta > 1 / (3 - 2 * p.gamma) - 1e-12 and p.theta > 2 / (3 - p.beta) - 1e-12
    assert 1 <= p.theta < 1 / d
    assert d * p.theta < p.eta < 1
    assert (p.beta / 2) * 3 ** (d * p.theta * (p.n0 + 1) - p.eta * p.n0) < 1 + 1e-9
    assert 0 < p.x < p.beta - 1


def test_wilson():
    lo, hi = wilson_interval(0, 1)
    assert hi - lo > 0.7
    lo, hi = wilson_interval(5, 10)
    assert lo < 0.5 < hi
    with pytest.raises(ValueError):
        wilson_interval(3, 2)


def test_wilson_coverage():
    rng = np.random.default_rng(0)
    p, n = 0.3, 100
    ks = rng.binomial(n, p, size=1000)
    cover = np.mean([lo <= p <= hi for lo, hi in (wilson_interval(int(k), n) for k in ks)])
    assert cover >= 0.93


def _continuum_variance(t, x, psi):
    """int_0^t int G(t-s, x-y)^2 psi(y) dy ds via tau = v^2 and a y grid resolving sqrt(tau)."""
    v, w = np.polynomial.legendre.leggauss(48)
    v = 0.5 * math.sqrt(t) * (v + 1)
    w = 0.5 * math.sqrt(t) * w
    total = 0.0
    for vi, wi in zip(v, w):
        tau = max(vi * vi, 2e-6)
        n = int(max(2048, 20 * 2 * math.pi / math.sqrt(tau)))
        y = -math.pi + np.arange(n) * (2 * math.pi / n)
        g = ke(tau, x - y)
        total += wi * 2 * vi * float(np.sum(g * g * psi(y))) * (2 * math.pi / n)
    return total


def test_ito_isometry_against_continuum():
    N, T, n = 128, 0.3, 6
    f = lambda y: 1 + 0.5 * np.cos(y)  # noqa: E731
    phi = AdaptedField.from_function(lambda s, x: f(x) + 0 * s, T, n, N)
    reps = 4000
    from explosive_she.convolution import _spectral_paths

    dW = np.stack([derive_stream(23, i, N).sample_block(phi.dt, n) for i in range(reps)])
    cell = 40
    z = _spectral_paths(phi.samples, dW, phi.dt)[:, -1, cell]
    x = -math.pi + (cell + 0.5) * phi.dx
    target = _continuum_variance(T, x, lambda y: f(y) ** 2)
    emp = z.var(ddof=1)
    se = math.sqrt((np.mean((z - z.mean()) ** 4) - emp**2) / reps)
    assert abs(emp - target) < 3 * se
    # sanity: the quadrature reproduces the series for phi = 1
    assert _continuum_variance(T, 0.0, lambda y: np.ones_like(y)) == pytest.approx(ito_variance_series(T), rel=2e-3)
