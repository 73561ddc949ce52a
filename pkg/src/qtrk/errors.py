"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or invalid shapes."""


class DomainError(ValueError):
    """A scalar argument lies outside the admissible range of a formula."""


class NumericalError(ArithmeticError):
    """A numerical consistency check failed."""


class SingularRowError(NumericalError):
    """A row slice has a (near) zero Fourier coefficient vector."""

    def __init__(self, row, freq, norm):
        self.row = row
        self.freq = freq
        self.norm = norm
        super().__init__(
            f"row slice {row} is singular at Fourier index {freq} (||a_hat|| = {norm:.3e})"
        )


class ConfigError(ValueError):
    """Invalid experiment or corruption configuration."""


class ConstructionError(RuntimeError):
    """A constructed instance could not satisfy its defining property."""
