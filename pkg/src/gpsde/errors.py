"""Exception types shared across the package."""


class GpsdeError(Exception):
    """Base class for all package-specific errors."""


class FactorizationError(GpsdeError):
    """Cholesky (or equivalent) factorization failed on a matrix that was
    expected to be positive definite."""

    def __init__(self, message, smallest_pivot=None):
        super().__init__(message)
        self.smallest_pivot = smallest_pivot


class DivergenceError(GpsdeError):
    """A numerical state became non-finite during integration/simulation."""

    def __init__(self, message, step=None, path=None):
        super().__init__(message)
        self.step = step
        self.path = path


class StabilityError(GpsdeError):
    """A propagated covariance lost positive semi-definiteness."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class CapacityError(GpsdeError):
    """A size guard was exceeded (quadrature tensor grids, dense expm, or
    trajectory-count search caps)."""


class MassLeakageError(GpsdeError):
    """Too much probability mass left the finite grid."""

    def __init__(self, message, remaining_mass=None):
        super().__init__(message)
        self.remaining_mass = remaining_mass


class ConfigError(GpsdeError):
    """A run configuration failed validation."""
