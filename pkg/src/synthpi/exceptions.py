"""Exception and warning types raised across the package."""


class SynthpiError(Exception):
    """Base class for all package errors."""


class ConfigError(SynthpiError):
    """Invalid run configuration or CLI arguments."""


# --- panel ingestion ---

class DuplicateKeyError(SynthpiError):
    """A (unit, time, feature) triple appears more than once."""


class UnknownUnitError(SynthpiError):
    """Declared treated/donor unit is absent from the data."""


class EmptyPeriodSetError(SynthpiError):
    """Pre- or post-period set is empty, overlapping, or out of order."""


class AllPrePeriodsDroppedError(SynthpiError):
    """Missing-data rules removed every pre-treatment period."""


class CollinearCovariatesError(SynthpiError):
    """Global constant requested together with a per-feature constant."""


class RankDeficientCError(SynthpiError):
    """A covariate-adjustment block has linearly dependent columns."""


# --- constraint grammar ---

class InconsistentSpecError(SynthpiError):
    """Mutually inconsistent constraint options."""


class MissingQError(SynthpiError):
    """A norm constraint needs Q (or Q2) but none was given or resolvable."""


# --- solver ---

class InfeasibleError(SynthpiError):
    """The constraint set is empty (or the solver certified infeasibility)."""


class NumericalFailureError(SynthpiError):
    """Solver hit its iteration cap with unacceptably large residuals."""


# --- estimation / uncertainty ---

class DegenerateOLSError(SynthpiError):
    """Least-squares step of the ridge tuning rule is degenerate."""


class ZeroDonorVarianceError(SynthpiError):
    """Some donor column has zero variance, leaving rho undefined."""


class MissingBoundsError(SynthpiError):
    """Interval assembly requested a period with no computed/overridden bounds."""


# --- warnings ---

class SynthpiWarning(UserWarning):
    """Base class for package warnings."""


class NonBindingRidgeWarning(SynthpiWarning):
    """Ridge lambda recovery attempted while the l2 constraint is slack."""


class SingularDesignWarning(SynthpiWarning):
    """Residual-model design matrix is rank deficient; least-norm fit used."""


class LeverageOneWarning(SynthpiWarning):
    """A leverage value reached one; variance correction capped."""


class UnboundedBoundWarning(SynthpiWarning):
    """A simulated bound was unbounded and recorded as +/-inf."""


class NegativeVarianceFitWarning(SynthpiWarning):
    """Fitted conditional variance was nonpositive; floored at the unconditional value."""


class QregCrossingWarning(SynthpiWarning):
    """Fitted quantile bounds crossed; they were swapped."""


class DegenerateObjectiveWarning(SynthpiWarning):
    """Objective is not strictly convex; returned optimum may be non-unique."""
