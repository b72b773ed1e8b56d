"""Exception types shared across the library."""


class GeoflowError(Exception):
    """Base class for all library-specific failures."""


class GridMismatchError(GeoflowError, ValueError):
    """Two fields that must share a grid do not."""


class DomainError(GeoflowError, ValueError):
    """An input value is outside the operation's domain (non-finite, wrong shape, ...)."""


class BlowUpError(GeoflowError, ArithmeticError):
    """A time integration produced a non-finite state.

    Carries the step index at which the state stopped being finite.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class RelaxationError(GeoflowError, RuntimeError):
    """Fixed-point relaxation did not reach the requested tolerance.

    Carries the best residual seen so the caller can decide whether it is
    close enough anyway.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class DegenerateFixedPointError(GeoflowError, RuntimeError):
    """The state Hessian at a fixed point is singular; no adjoint solution exists."""


class ConfigError(GeoflowError, ValueError):
    """A configuration file failed to parse or validate. Message includes line numbers."""
