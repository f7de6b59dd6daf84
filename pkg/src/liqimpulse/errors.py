"""Exception types raised across the package."""


class LiqImpulseError(Exception):
    """Base class for all package errors."""


class InputError(LiqImpulseError, ValueError):
    """Rejected input: malformed, non-finite or out-of-contract arguments."""


class DomainError(LiqImpulseError, ValueError):
    """Argument outside the domain of a function (e.g. |z| > 2M for a cost)."""


class CorruptionError(LiqImpulseError):
    """Persisted artifact failed its integrity check."""


class GridMismatchError(LiqImpulseError):
    """Two objects were built on incompatible lattices."""


class SolverInvariantError(LiqImpulseError):
    """A solved layer violated a structural invariant beyond tolerance."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic


class PolicyError(LiqImpulseError):
    """Policy extraction or execution hit an inconsistent state (e.g. a jump cycle)."""


class ConfigError(LiqImpulseError, ValueError):
    """Invalid run configuration; the message names the offending field."""


class DependencyError(LiqImpulseError):
    """A required upstream artifact is missing or has mismatched provenance."""
