"""Exception hierarchy shared across the package.

Every error raised by quasitest derives from :class:`QuasitestError`, so
callers can catch one base class at an API boundary (the CLI maps the
subclasses onto exit codes).
"""


class QuasitestError(Exception):
    """Base class for all quasitest errors."""


class InvalidParameter(QuasitestError):
    """A configuration or model parameter is outside its valid range."""


class LengthMismatch(QuasitestError):
    """Paired inputs have inconsistent lengths or sizes."""


class InfeasibleSample(QuasitestError):
    """The observed data has zero weight under the bias function.

    Raised when some diagonal entry w(x_i, y_i) vanishes, or when a raw
    weight matrix admits no permutation with positive product weight.
    """


class NegativeWeight(QuasitestError):
    """A bias function returned a negative value."""


class OracleTooLarge(QuasitestError):
    """An exact enumeration oracle was asked for a size beyond its cap."""


class DegenerateLaw(QuasitestError):
    """The weighted permutation law has total mass zero."""


class EmptyInput(QuasitestError):
    """An estimator received no data."""


class TooFewUncensored(QuasitestError):
    """Fewer than two uncensored observations are available."""


class NonTruncatedInput(QuasitestError):
    """Censored-data handling requires x < y for every observation."""


class AllDrawsDead(QuasitestError):
    """Every sequentially constructed permutation hit a dead end."""


class ZeroTotalWeight(QuasitestError):
    """All importance weights vanished; nothing to normalize."""


class NoValidCenters(QuasitestError):
    """Every quadrant center was removed by the low-expected-count filter."""


class ZeroWeightAtPoint(QuasitestError):
    """An inverse-weighting computation hit w(x_i, y_i) = 0."""


class ZeroNormalizer(QuasitestError):
    """The weighted product measure assigns zero total mass."""


class ZeroConditionalExpectation(QuasitestError):
    """An iterative marginal update produced E{w(x_i, Y)} = 0."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class EstimatorNotApplicable(QuasitestError):
    """The requested marginal estimator is invalid for this bias/data."""


class CensoredSampleError(QuasitestError):
    """An operation that requires uncensored data received censored data."""


class BoundViolated(QuasitestError):
    """A drawn weight exceeded the declared upper bound."""


class AcceptanceTooLow(QuasitestError):
    """Acceptance sampling is rejecting essentially every proposal."""


class InputFormatError(QuasitestError):
    """A data file could not be parsed; message names the offending row."""
