"""Exception hierarchy shared by every module of the package."""


class DrotError(Exception):
    """Base class for all errors raised by this package."""


class InvalidProblem(DrotError, ValueError):
    """A transport problem violates one of its invariants."""


class NegativeCost(InvalidProblem):
    pass


class NonFiniteEntry(InvalidProblem):
    pass


class EmptyDimension(InvalidProblem):
    pass


class MarginalNotSimplex(InvalidProblem):
    """A marginal is not on the probability simplex.

    Attributes:
        which: ``"p"`` or ``"q"``.
        total: the observed sum of the offending vector.
    """

    def __init__(self, which, total, reason="sum"):
        self.which = which
        self.total = float(total)
        self.reason = reason
        if reason == "sum":
            msg = f"marginal {which} does not sum to 1 (sum={total!r}, deviation={total - 1.0:+.3e})"
        else:
            msg = f"marginal {which} has negative entries"
        super().__init__(msg)


class ShapeMismatch(DrotError, ValueError):
    pass


class DimensionMismatch(DrotError, ValueError):
    pass


class NonPositiveRho(DrotError, ValueError):
    pass


class InvalidInitialPlan(DrotError, ValueError):
    pass


class NonFiniteIterate(DrotError, FloatingPointError):
    """An iterate overflowed or became NaN."""


class FoldStateMismatch(DrotError, RuntimeError):
    """The skip-cost pass was called with a fold flag inconsistent with the buffer."""


class ZeroMarginal(DrotError, ValueError):
    pass


class TooLarge(DrotError, ValueError):
    pass


class DegenerateCost(DrotError, ValueError):
    pass


class EmptyImage(DrotError, ValueError):
    pass


class KTooLarge(DrotError, ValueError):
    pass


class MatrixFileError(DrotError, ValueError):
    pass


class BadMagic(MatrixFileError):
    pass


class VersionUnsupported(MatrixFileError):
    pass


class SizeMismatch(MatrixFileError):
    pass


class RaggedCsv(MatrixFileError):
    pass
