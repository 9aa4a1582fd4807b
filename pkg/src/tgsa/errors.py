"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Input values violate an operation's domain contract."""


class GradientError(RuntimeError):
    """Backward-pass contract violation (e.g. non-scalar loss)."""


class ConfigError(ValueError):
    """Invalid configuration (window/hop, file format, CLI flags)."""
