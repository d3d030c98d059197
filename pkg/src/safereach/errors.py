"""Exception hierarchy shared by all modules."""


class SafeReachError(Exception):
    """Base class for every error raised by this package."""


class InvalidEllipsoidError(SafeReachError, ValueError):
    """Shape matrix is not symmetric, not PSD, or singular without the degenerate flag."""


class DegenerateDirectionError(SafeReachError, ValueError):
    """A direction lies in the null space of a shape matrix."""


class SegmentDegenerateError(SafeReachError, ArithmeticError):
    """The internal-approximation shape matrix lost positive definiteness."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class InfeasiblePartitionError(SafeReachError, ValueError):
    """Constraint erosion produced the empty set; refine the partition."""


class SafetyViolationImminent(SafeReachError, RuntimeError):
    """State left every tube and no fallback is enabled."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class StabilizabilityError(SafeReachError, ArithmeticError):
    """Riccati integration did not reach a stationary point."""


class ConfigError(SafeReachError, ValueError):
    """Invalid run configuration."""


class StaleArtifactError(SafeReachError, RuntimeError):
    """Stored artifacts were produced from a different configuration."""
