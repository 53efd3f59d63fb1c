"""Exception types raised across the package."""
from __future__ import annotations


class NonConvergenceError(RuntimeError):
    """A numerical procedure missed its tolerance.

    ``best`` holds the most refined estimate reached and ``error`` its
    estimated error, so callers can decide whether to accept it.
    """

    def __init__(self, message: str, best=None, error: float | None = None):
        super().__init__(message)
        self.best = best
        self.error = error


class HypothesisNotCertified(ValueError):
    """The convexity hypothesis on ``x -> Gamma(sqrt(x))`` failed its grid test."""


class InstanceTooLarge(ValueError):
    """An exact enumeration exceeds the configured term budget."""


class WeightOverflow(FloatingPointError):
    """Importance weights overflow for the requested tilt."""
