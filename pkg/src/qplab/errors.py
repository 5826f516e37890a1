"""Exception types shared across the package."""


class QplabError(Exception):
    """Base class for all package-specific errors."""


class IntegrationFailure(QplabError):
    """ODE integration broke down (step underflow / stiff blow-up).

    Carries the last valid state so callers can diagnose where the
    trajectory died.
    """

    def __init__(self, message, last_time=None, last_state=None):
        super().__init__(message)
        self.last_time = last_time
        self.last_state = last_state


class NoCycleError(QplabError):
    """Periodic-orbit search did not converge."""


class WrongAttractorTypeError(QplabError):
    """A different attractor type was found than the one requested."""


class UnknownScenarioError(QplabError):
    """Scenario name not in the registry."""


class NotNormallyContractingError(QplabError):
    """Normal spectrum of the attractor is not strictly contracting."""


class TruncationError(QplabError):
    """A truncated improper integral failed to meet its tolerance."""


class ConditioningError(QplabError):
    """A matrix restriction is too ill-conditioned to invert reliably."""


class ChartFailureError(QplabError):
    """Too many invalid points while extending the unstable-manifold chart."""


class DecayFailureError(QplabError):
    """Backward Hamiltonian trajectory failed to decay to the attractor."""


class DomainError(QplabError):
    """Geometric input leaves the region where a field is defined."""


class CoverageError(QplabError):
    """Characteristic sweep left a requested subregion empty."""


class NonConvergenceError(QplabError):
    """Optimizer stagnated above tolerance; best iterate attached."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class RefineGridError(QplabError):
    """Grid too coarse for the requested noise level (cell Peclet > 2)."""


class DiscretizationFailureError(QplabError):
    """A discrete solve produced qualitatively wrong output (e.g. signs)."""


class SpectralError(QplabError):
    """Eigen-iteration stagnated (tiny spectral gap or bad conditioning)."""


class PositivityError(QplabError):
    """A density lost positivity (or was not a probability density)."""


class DependencyError(QplabError):
    """A pipeline stage is missing an artifact from an earlier stage."""


class ConfigError(QplabError):
    """Invalid scenario / run configuration."""
