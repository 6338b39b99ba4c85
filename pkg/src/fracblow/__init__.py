"""Numerical laboratory for finite-time blow-up of stochastic heat equations driven by a fractional Laplacian."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    FracBlowError,
    HypothesisNotMet,
    NumericalAccuracyError,
    UnsupportedVariant,
)
from .stable_kernel import StableKernelSpec, apply_semigroup, eval_kernel
from .correlation import CorrelationKernel, check_dalang, eval_correlation, infimum_on_ball
from .renewal import (
    RenewalProblem,
    blowup_time_power,
    blowup_time_singular,
    reduce_exponent,
    solve_volterra_numeric,
    threshold_A0,
)
from .lattice import Lattice, ScalarField, make_lattice
from .field_sim import SigmaSpec, SimulationConfig, run_path, sample_noise, simulate_ensemble, step_mild
from .moments import (
    detect_blowup_proxy,
    dirichlet_experiment,
    estimate_moments,
    horizon_sweep_riesz,
    kappa_sweep,
    linear_moment_oracle,
)
