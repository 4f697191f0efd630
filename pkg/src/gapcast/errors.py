"""Exception hierarchy for gapcast.

Every error raised deliberately by the library derives from GapcastError, so
callers (and the CLI) can distinguish modelling problems from plain bugs.
"""


class GapcastError(Exception):
    """Base class for all gapcast errors."""


class InvalidParameterError(GapcastError):
    """A numeric or structural parameter is out of its admissible range."""


class SingularDensityError(GapcastError):
    """A spectral density is singular or non-finite where it must be invertible."""


class InvalidPatternError(GapcastError):
    """A missing-observation pattern is malformed (overlap, wrong sign, ...)."""


class InsufficientLagError(GapcastError):
    """A Fourier coefficient table does not cover a requested lag."""


class NonInvertibleOperatorError(GapcastError):
    """The assembled operator matrix is numerically non-invertible."""


class DegenerateObservationsError(GapcastError):
    """The observation covariance matrix of the projection oracle is singular."""


class SimulationMethodError(GapcastError):
    """The path sampler cannot produce a valid embedding for this model."""


class InternalConsistencyError(GapcastError):
    """Two routes to the same quantity disagree beyond numerical tolerance."""


class InfeasibleClassError(GapcastError):
    """A density family member violates its declared class constraints."""


class UnsupportedClassError(GapcastError):
    """The requested density-class kind/dimension combination is not implemented."""


class ConfigError(GapcastError):
    """A run configuration failed to parse or validate.

    ``location`` carries a human-readable anchor (file, section/key path and,
    when available, a line number).
    """

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)
