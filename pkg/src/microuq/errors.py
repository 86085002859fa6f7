"""Exception types shared across the package."""


class MicroUQError(Exception):
    """Base class for all package errors."""


class NonPhysical(MicroUQError, ValueError):
    pass


class Degenerate(MicroUQError, ValueError):
    pass


class IndexOutOfRange(MicroUQError, IndexError):
    pass


class OutOfRange(MicroUQError, ValueError):
    pass


class TargetUnreachable(MicroUQError, RuntimeError):
    def __init__(self, reached: float, target: float, attempts: int):
        super().__init__(
            f"volume fraction {reached:.4f} after {attempts} attempts, target {target:.4f}"
        )
        self.reached = reached
        self.target = target
        self.attempts = attempts


class DimensionMismatch(MicroUQError, ValueError):
    pass


class NoConvergence(MicroUQError, RuntimeError):
    """CG hit max_iter; carries the iteration count and last relative residual."""

    def __init__(self, iterations: int, residual: float, strain_index: int | None = None):
        msg = f"no convergence after {iterations} iterations (residual {residual:.3e})"
        if strain_index is not None:
            msg += f" for unit strain {strain_index}"
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual
        self.strain_index = strain_index


class ShapeMismatch(MicroUQError, ValueError):
    pass


class DatasetTooSmall(MicroUQError, ValueError):
    pass


class Diverged(MicroUQError, RuntimeError):
    pass


class EmptySet(MicroUQError, ValueError):
    pass


class InvalidBounds(MicroUQError, ValueError):
    pass


class BadFractions(MicroUQError, ValueError):
    pass


class CorruptFile(MicroUQError, ValueError):
    pass


class SizeOverflow(MicroUQError, ValueError):
    pass


class PropertyMismatch(MicroUQError, ValueError):
    pass


class ConfigError(MicroUQError, ValueError):
    pass
