"""Exception types shared across the package.

Every failure mode that a caller can act on gets its own class; generic
ValueError/RuntimeError are reserved for programming errors.
"""

from __future__ import annotations


class SlqError(Exception):
    """Base class for all package-specific errors."""


class ParseError(SlqError):
    """Problem file is not valid JSON or is missing required keys."""


class DimensionError(SlqError):
    """A coefficient or weight has a shape inconsistent with (n, m)."""


class NonSymmetricWeight(SlqError):
    """A weight declared symmetric has asymmetry above tolerance."""


class UnsupportedStochasticData(SlqError):
    """Problem file requests random coefficients, which are out of scope."""


class NonFiniteValue(SlqError):
    """An ODE right-hand side produced NaN or Inf (bad data, not blow-up)."""


class SingularFundamentalMatrix(SlqError):
    """The state transition matrix is numerically singular (cond > 1e12)."""


class NewtonFailure(SlqError):
    """Base class for Newton iteration failures on the Riccati flow."""


class NotUniformlyConvex(NewtonFailure):
    """An iterate's control weight R + D'PD dropped below the positivity floor.

    Attributes
    ----------
    iteration : index of the offending Newton iterate
    min_eigenvalue : worst eigenvalue found
    time : grid time where it occurred
    """

    def __init__(self, iteration: int, min_eigenvalue: float, time: float):
        self.iteration = iteration
        self.min_eigenvalue = min_eigenvalue
        self.time = time
        super().__init__(
            f"control weight lost uniform positivity at iterate {iteration}: "
            f"min eigenvalue {min_eigenvalue:.3e} at t={time:.6g}"
        )


class NoConvergence(NewtonFailure):
    """Newton iteration did not meet tolerance within the iteration cap."""

    def __init__(self, iterations: int, last_change: float):
        self.iterations = iterations
        self.last_change = last_change
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(last max-node change {last_change:.3e})"
        )


class MonotonicityViolation(NewtonFailure):
    """Successive Newton iterates stopped being non-increasing."""

    def __init__(self, iteration: int, min_eigenvalue: float):
        self.iteration = iteration
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"iterate {iteration} -> {iteration + 1} not non-increasing: "
            f"min eigenvalue of difference {min_eigenvalue:.3e}"
        )


class NotConvexAtEpsilon(SlqError):
    """The shifted problem failed to solve at a given regularization level.

    This is a verdict, not a crash: it is the numerical witness that the
    cost functional is not uniformly convex at this shift.
    """

    def __init__(self, epsilon: float, reason: str):
        self.epsilon = epsilon
        self.reason = reason
        super().__init__(f"not convex at epsilon={epsilon:.6g}: {reason}")


class PreconditionD0(SlqError):
    """direct_riccati_D0 called on a problem with D != 0 or R not uniformly positive."""


class PreconditionDelta(SlqError):
    """Certificate called with a gap matrix that is not uniformly positive definite."""
