"""Numerical experiments on explosion for the periodic stochastic heat equation
``u_t = u_xx + b(u) + sigma(u) W'`` with power-law coefficients."""

from .coefficients import CoefficientSpec, Regime, classify, eval_b, eval_cutoff, eval_sigma, lipschitz_constant
from .errors import ConfigError, DomainError, IntegrationError, PreconditionError, StiffnessError
from .heat_kernel import KernelEvaluator, eval_kernel, kernel_sup_bound, semigroup_check
from .integrator import (
    ExplosionMonitor,
    FieldState,
    StepperConfig,
    TrajectoryRecord,
    make_initial_condition,
    run_ensemble,
    run_trajectory,
    step,
)
from .noise import NoiseGrid, derive_seed, derive_stream, sample_increments

__version__ = "0.1.0"
