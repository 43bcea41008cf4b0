"""Exception types raised across the package.

Input-validation failures derive from ValueError so callers that only
care about "bad argument" can catch one base; solver failures derive
from RuntimeError.
"""


class InvalidMatrix(ValueError):
    """Matrix input is malformed (non-finite, non-square, wrong shape)."""


class NotPositiveDefinite(InvalidMatrix):
    """Strictly positive-definite input required."""


class NotPSD(InvalidMatrix):
    """Positive-semidefinite input required (eigenvalue below tolerance)."""


class NotOrthonormal(InvalidMatrix):
    """Columns of the supplied basis/rotation are not orthonormal."""


class DimMismatch(ValueError):
    """Operands have incompatible dimensions."""


class ZeroSummary(ValueError):
    """Operator has non-positive trace where a positive trace is required."""


class InvalidTaskValue(ValueError):
    """Task values are non-negative by construction; a negative one was supplied."""


class EmptyDataset(ValueError):
    """Operation requires at least one sample."""


class InvalidRestriction(ValueError):
    """Requested family restriction exceeds the parent family."""


class RankDeficient(ValueError):
    """Input does not have the rank the operation requires."""


class FamilyMismatch(ValueError):
    """Summaries built under different perturbation families cannot be combined."""


class InvalidRank(ValueError):
    """Requested number of directions exceeds the operator dimension."""


class InvalidProbeSet(ValueError):
    """Probe set is unusable (e.g. empty amplitude list)."""


class DegenerateActivations(ValueError):
    """Activation matrix has zero norm after centering."""


class InsufficientData(ValueError):
    """Too few trials/residuals for the requested estimate."""


class GridTooSmall(ValueError):
    """Condition grid axis too short for the finite-difference stencil."""


class NoConvergence(RuntimeError):
    """Fixed-point iteration hit max_iter before reaching tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class SingularLinearization(RuntimeError):
    """I - D(x)W is numerically singular; implicit Jacobian undefined."""
