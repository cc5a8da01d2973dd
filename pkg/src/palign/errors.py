"""Exception types raised across the package."""


class PalignError(Exception):
    """Base class for all package errors."""


class InvalidInputError(PalignError, ValueError):
    """Non-finite or otherwise malformed numerical input."""


class ConfigError(PalignError, ValueError):
    """Inconsistent kernel, scheme or experiment configuration."""


class CollisionError(PalignError):
    """Two agents collided in velocity where the p-alignment force blows up."""

    def __init__(self, i: int, j: int, t: float, reason: str = "velocity collision"):
        self.i, self.j, self.t = int(i), int(j), float(t)
        super().__init__(f"{reason} between agents {self.i} and {self.j} at t={self.t:.17g}")


class StiffnessError(PalignError):
    """Adaptive step fell below the smallest allowed step."""


class VacuumError(PalignError):
    """Density dropped below the configured floor."""


class FitDomainError(PalignError, ValueError):
    """Non-positive or too few values inside a fit window."""


class ParameterRangeError(PalignError, ValueError):
    """Parameters outside the range where a functional is defined."""
