"""Parareal time-parallel iteration for a damped 2D Maxwell system with state-dependent Q-Wiener forcing."""

from .grid import (
    DiscreteMaxwellOperator,
    FieldState,
    GridSpec,
    MaxwellCoefficients,
    apply_curl_damped,
    build_operator,
    inner_product,
    semigroup_apply,
)
from .noise import NoiseBasis, WienerPath, build_basis, increment_field, sample_path
from .parareal import PararealConfig, PararealRun, initialize, residual, run, sweep
from .propagators import (
    NonlinearitySpec,
    TimeGridSpec,
    coarse_G,
    exponential_step,
    fine_F_exponential,
    fine_F_reference,
)
from ._parallel import get_num_threads, num_threads, set_num_threads

__all__ = [
    "DiscreteMaxwellOperator", "FieldState", "GridSpec", "MaxwellCoefficients", "apply_curl_damped",
    "build_operator", "inner_product", "semigroup_apply", "NoiseBasis", "WienerPath", "build_basis",
    "increment_field", "sample_path", "PararealConfig", "PararealRun", "initialize", "residual", "run",
    "sweep", "NonlinearitySpec", "TimeGridSpec", "coarse_G", "exponential_step", "fine_F_exponential",
    "fine_F_reference", "get_num_threads", "num_threads", "set_num_threads",
]
