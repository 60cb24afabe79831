"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions disagree with the operator or with each other."""


class DivergenceError(FloatingPointError):
    """Solver state became non-finite or exceeded the magnitude guard."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class TensorFormatError(ValueError):
    """A tensor or image file could not be decoded."""


class TapeConsumedError(RuntimeError):
    """An unroll tape was used for a second backward pass."""
