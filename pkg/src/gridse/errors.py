"""Exception types shared across the package."""


class EstimationError(Exception):
    """Base class for every error raised by gridse."""


class InputError(EstimationError):
    """Malformed or inconsistent input data (files, schemas, references)."""


class NotConnected(InputError):
    """The bus/branch graph splits into more than one island."""


class ZeroImpedance(EstimationError):
    """Branch series impedance is (0, 0) and cannot be inverted."""


class DimensionMismatch(EstimationError):
    """Vector length does not match the network size."""


class ZeroMagnitude(EstimationError):
    """A complex bus voltage of exactly zero has no polar form."""


class NonPositiveVariance(EstimationError):
    """Measurement variances and noise variances must be positive."""


class FlatStartSingularity(EstimationError):
    """Branch current magnitude too small for a defined Jacobian row.

    Current-magnitude and current-angle rows divide by the current
    magnitude; below the guard threshold the partials are undefined.
    """


class UnsupportedKind(EstimationError):
    """Measurement kind not admissible in the requested formulation."""


class EmptyMeasurementSet(EstimationError):
    """An estimation problem needs at least one measurement row."""


class SingularGain(EstimationError):
    """The gain matrix could not be factorized (unobservable or
    numerically rank deficient problem)."""
