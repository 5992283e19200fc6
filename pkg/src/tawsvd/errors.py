"""Exception types shared across the package."""


class TawsvdError(Exception):
    """Base class for all errors raised by tawsvd."""


class ShapeError(TawsvdError, ValueError):
    """Operand shapes do not conform."""


class NumericalError(TawsvdError, ArithmeticError):
    """A factorization or solve failed to produce a usable result."""

    def __init__(self, message, *, layer=None, shape=None):
        super().__init__(message)
        self.layer = layer
        self.shape = shape


class DefinitenessError(NumericalError):
    """Cholesky hit a non-positive pivot."""

    def __init__(self, message, *, pivot=None, epsilon=None, layer=None, shape=None):
        super().__init__(message, layer=layer, shape=shape)
        self.pivot = pivot
        self.epsilon = epsilon


class SingularityError(NumericalError):
    """Triangular system with a zero on the diagonal."""


class FormatError(TawsvdError):
    """Malformed tensor file or manifest."""

    def __init__(self, message, *, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
