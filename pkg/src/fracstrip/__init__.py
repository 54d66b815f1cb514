"""Concentration estimates for slow-fast systems driven by fractional Brownian motion."""

__version__ = "0.1.0"

from .errors import FracstripError, NumericalError, ValidationError
from .fbm import HurstIndex, TimeGrid, derive_seed, fbm_covariance, sample_fbm, sample_cylindrical_fbm
from .stats import MCEstimate
from .variance import (LinearDrift, QuadratureSpec, variance_asymptotic,
                       variance_bound_quadrature, variance_exact_double_integral)
from .bounds import BoundParams, BoundReport, q_of_s, sde_bound, spde_bound

__all__ = [
    "__version__", "FracstripError", "NumericalError", "ValidationError", "HurstIndex",
    "TimeGrid", "derive_seed", "fbm_covariance", "sample_fbm", "sample_cylindrical_fbm",
    "MCEstimate", "LinearDrift", "QuadratureSpec", "variance_asymptotic",
    "variance_bound_quadrature", "variance_exact_double_integral", "BoundParams",
    "BoundReport", "q_of_s", "sde_bound", "spde_bound",
]
