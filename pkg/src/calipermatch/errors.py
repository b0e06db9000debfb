"""Exception types raised across the package.

Every failure mode that callers are expected to distinguish gets its own
class; all inherit from :class:`CaliperMatchError` so a bare
``except CaliperMatchError`` catches anything this package raises on purpose.
"""


class CaliperMatchError(Exception):
    """Base class for all errors raised by this package."""


# -- data ingestion / splitting ------------------------------------------------

class SchemaMismatchError(CaliperMatchError):
    """A named column is absent from the input file."""


class NonBinaryTreatmentError(CaliperMatchError):
    """A treatment cell is not exactly 0 or 1."""


class NonFiniteValueError(CaliperMatchError):
    """An outcome or covariate cell is missing, NaN or infinite."""


class TooSmallError(CaliperMatchError):
    """The sample is too small for the requested operation."""


class DegenerateSplitError(CaliperMatchError):
    """No random halving puts both treatment groups into both halves."""


# -- propensity fitting --------------------------------------------------------

class RankDeficientError(CaliperMatchError):
    """The design matrix does not have full column rank."""


class SeparationError(CaliperMatchError):
    """The log-likelihood is unbounded: treatment is (near) perfectly separated."""


class NoConvergenceError(CaliperMatchError):
    """Newton iterations exhausted without meeting the score tolerance."""


class SingularInformationError(CaliperMatchError):
    """The weighted Gram matrix inside the parameter variance is singular."""


class DimensionMismatchError(CaliperMatchError):
    """Covariate row length does not match the parameter vector."""


# -- matching ------------------------------------------------------------------

class EmptyGroupError(CaliperMatchError):
    """A treatment group required by the operation is empty."""


class NonPositiveCaliperError(CaliperMatchError):
    """The caliper must be strictly positive."""


# -- estimators ----------------------------------------------------------------

class LengthMismatchError(CaliperMatchError):
    """Inputs built on different numbers of units."""


class NoTreatedError(CaliperMatchError):
    """The sample contains no treated units."""


# -- variance estimation -------------------------------------------------------

class DensityFloorError(CaliperMatchError):
    """A kernel density estimate fell below the floor at an evaluation point."""

    def __init__(self, message, unit_indices=None):
        super().__init__(message)
        self.unit_indices = [] if unit_indices is None else list(unit_indices)


class DegenerateWindowError(CaliperMatchError):
    """The boundary-trimmed evaluation window is empty or inverted."""


# -- inference -----------------------------------------------------------------

class BadAlphaError(CaliperMatchError):
    """Confidence level alpha must lie strictly between 0 and 1."""


class PipelineError(CaliperMatchError):
    """An upstream failure inside the estimation pipeline, labelled by stage."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


# -- simulation ----------------------------------------------------------------

class TooLargeError(CaliperMatchError):
    """The input exceeds a quadratic-cost guard."""
