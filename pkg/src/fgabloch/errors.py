"""Exception hierarchy.

The CLI maps these onto exit codes: ConfigError -> 2, ResourceLimitError -> 4,
everything else derived from FgaError -> 3.
"""


class FgaError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FgaError):
    """Inconsistent or malformed caller input."""


class CutoffError(InvalidInputError):
    """Plane-wave cutoff smaller than the potential's reciprocal support."""


class GridMismatchError(InvalidInputError):
    """Two fields or grids that must be identical are not."""


class PlanError(InvalidInputError):
    """Synthesis plan with mismatched times, grids or epsilons."""


class ResolutionError(FgaError):
    """Spatial grid too coarse for the requested epsilon."""


class QuadratureRiskError(FgaError):
    """Phase-space spacing violates the c_g * sqrt(eps) bound."""


class GaugeFixError(FgaError):
    """Parallel transport failed: adjacent eigenvector overlap too small."""


class BandIsolationError(FgaError):
    """Requested band is not isolated well enough for the asymptotics."""


class NumericError(FgaError):
    """Eigensolver or integrator failure."""


class InvariantViolationError(NumericError):
    """A runtime invariant (symplecticity, Z lower bound, ...) was breached."""


class ConfigError(FgaError):
    """Run configuration could not be parsed or validated."""


class ResourceLimitError(FgaError):
    """Refusal to run: estimated resource use exceeds the configured limit."""
