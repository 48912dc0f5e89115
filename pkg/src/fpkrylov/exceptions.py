"""Exception hierarchy for fpkrylov."""


class FPKrylovError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(FPKrylovError, ValueError):
    """Invalid dimensions, parameters or inputs."""


class SingularMatrixError(FPKrylovError, ArithmeticError):
    """The banded factorization hit a (numerically) zero pivot."""


class BreakdownError(FPKrylovError, ArithmeticError):
    """BiCGSTAB broke down; ``x`` holds the best iterate found before it did."""

    def __init__(self, message, x=None, stats=None):
        super().__init__(message)
        self.x = x
        self.stats = stats


class EmptyBasisError(FPKrylovError):
    """Every harvested vector was degenerate."""


class ImageLoadError(FPKrylovError, OSError):
    """An image file could not be read or does not match the expected grid."""
