"""Exception types shared across the package."""


class MagflowError(Exception):
    """Base class for all package errors."""


class NearZeroVector(MagflowError):
    """Vector too close to the origin to project onto the sphere."""


class DegenerateTriangle(MagflowError):
    """Spherical triangle with (near-)antipodal vertices."""


class NonConvexFiber(MagflowError):
    """A sampled fiber Hessian of the Lagrangian is not positive definite."""


class UnsupportedLagrangian(MagflowError):
    """Operation only implemented for the electromagnetic Lagrangian kind."""


class StepExplosion(MagflowError):
    """Trajectory state grew beyond the allowed bound during integration."""


class StepTooLarge(MagflowError):
    """Node displacement between consecutive loops exceeds the sweep limit."""


class ZeroForm(MagflowError):
    """The combined magnetic 2-form vanishes identically (degenerate bound)."""


class ValleyCollapse(MagflowError):
    """Descent entered the short-loop valley: the seed collapses to a point."""


class MaxIterations(MagflowError):
    """Iteration budget exhausted before reaching the requested tolerance.

    Carries the best iterate found so far in ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class EndpointNotMinimal(MagflowError):
    """A minimax endpoint is not a converged local minimizer."""


class NotSymmetric(MagflowError):
    """System lacks the rotational symmetry required by the latitude oracle."""


class NoNegativeConfiguration(MagflowError):
    """No negative-action configuration found in the searched family."""


class ParseError(MagflowError):
    """Config file could not be parsed; reports the offending line."""

    def __init__(self, message, line_no=None):
        super().__init__(message)
        self.line_no = line_no


class ValidationError(MagflowError):
    """Config value failed validation; reports the offending key."""

    def __init__(self, key, message=""):
        super().__init__(f"{key}: {message}" if message else key)
        self.key = key
