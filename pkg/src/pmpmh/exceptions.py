"""Exception hierarchy shared across the package."""


class PMPMHError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PMPMHError, ValueError):
    """Trajectory, observation or block lengths are inconsistent."""


class ModelDefinitionError(PMPMHError):
    """A user-supplied density returned NaN or is otherwise ill-defined."""


class ConfigurationError(PMPMHError, ValueError):
    """Invalid tuning or grid configuration."""


class DegenerateGridError(PMPMHError):
    """Grid construction collapsed to too few distinct cut points."""


class DegenerateApproximationError(PMPMHError):
    """All midpoint-rule weights for some HMM quantity vanished."""


class FilteringDegeneracyError(PMPMHError):
    """Forward filtering hit a time point with zero total weight."""


class ParticleDegeneracyError(PMPMHError):
    """All particle weights vanished during conditional SMC.

    The offending time index and the raw log-weights are attached so the
    caller can report them.
    """

    def __init__(self, message, t=None, log_weights=None):
        super().__init__(message)
        self.t = t
        self.log_weights = log_weights
