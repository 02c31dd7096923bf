"""Exception types shared across the package.

Estimation code raises structured errors so callers (and the CLI, which maps
them to exit codes) can tell user mistakes from numerical failures.
"""

from __future__ import annotations


class RobustSurError(Exception):
    """Base class for all errors raised by this package."""


class SpecificationError(RobustSurError):
    """The user-supplied model, data, or configuration is invalid."""


class DimensionError(SpecificationError):
    """Shapes of responses/designs disagree; message names the equation."""


class RankError(RobustSurError):
    """A design matrix is rank deficient; message names dependent columns."""

    def __init__(self, message: str, columns: tuple[int, ...] = ()):
        super().__init__(message)
        self.columns = tuple(columns)


class NotPositiveDefiniteError(RobustSurError):
    """A matrix required to be positive definite is not."""

    def __init__(self, message: str, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class DegenerateDataError(RobustSurError):
    """Data carry no usable scale information (zero spread, all flagged...)."""


class ConvergenceError(RobustSurError):
    """An iterative routine failed to reach its tolerance."""


class EstimationError(RobustSurError):
    """An estimator could not produce a fit on the given data."""


class InferenceUnsupportedError(RobustSurError):
    """Inference was requested from a fit that does not provide it."""
