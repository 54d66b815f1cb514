"""Exception hierarchy.

Validation problems derive from :class:`ValueError`; numerical failures from
:class:`ArithmeticError`.  The command line maps the two families to exit
codes 2 and 3.
"""


class FracstripError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(FracstripError, ValueError):
    """An input violates a documented precondition."""


class NumericalError(FracstripError, ArithmeticError):
    """A numerical procedure failed to deliver a trustworthy result."""


class FbmSamplingError(NumericalError):
    """Neither circulant embedding nor Cholesky produced a valid sample."""


class QuadratureError(NumericalError):
    """Quadrature did not converge within the allowed subdivisions."""


class NewtonError(NumericalError):
    """Newton iteration did not converge."""


class StabilityError(NumericalError):
    """An equilibrium branch is not uniformly hyperbolic stable."""


class LeftBasinError(NumericalError):
    """The deterministic slow solution moved farther than ``d`` from the branch."""


class BlowUpError(NumericalError):
    """A trajectory exceeded the configured magnitude guard."""


class InvalidBoundError(ValidationError):
    """A bound is undefined for the requested parameters (e.g. ``r2*eps >= 1``)."""


class HTooLargeError(ValidationError):
    """The nonlinear correction ``h1`` is not smaller than ``h``."""


class DivergentSumError(ValidationError):
    """The mode-allocation series does not converge."""


class InsufficientReplicasError(NumericalError):
    """Monte Carlo data are too noisy to pin down a calibrated constant."""


class ConfigError(ValidationError):
    """A configuration file failed to parse or validate."""
