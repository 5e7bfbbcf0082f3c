"""Exception types shared across the package."""


class SwinTextError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(SwinTextError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(SwinTextError, ValueError):
    """A configuration value violates a documented constraint."""


class UsageError(SwinTextError, RuntimeError):
    """An API was called in an unsupported way (e.g. backward on a non-scalar)."""


class FormatError(SwinTextError, ValueError):
    """A serialized file does not conform to its binary format."""


class NumericsError(SwinTextError, ArithmeticError):
    """A numeric invariant was violated (NaN/Inf where finiteness is required)."""


class ResolutionError(SwinTextError, KeyError):
    """A prompt could not be resolved to an embedding."""

    def __str__(self) -> str:  # KeyError quotes its message; keep it readable
        return self.args[0] if self.args else ""
