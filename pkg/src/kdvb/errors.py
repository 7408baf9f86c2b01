"""Exception hierarchy.

Two families, mirrored by the CLI exit codes: ``InvalidInput`` for bad
arguments (exit 2) and ``NumericalFailure`` for runs that were well posed but
broke down numerically (exit 3).
"""

from __future__ import annotations


class InvalidInput(ValueError):
    """Argument violates a documented precondition."""


class NumericalFailure(RuntimeError):
    """A computation could not be completed to its stated tolerance."""


class PositivityError(NumericalFailure):
    """An integration step produced a non-positive component."""

    def __init__(self, message: str, index: int | None = None, value: float | None = None,
                 time: float | None = None):
        super().__init__(message)
        self.index = index
        self.value = value
        self.time = time


class FixedPoint(NumericalFailure):
    """The fast vector field vanishes at the starting state; there is no orbit."""


class NoReturnFound(NumericalFailure):
    """No near-return below threshold inside the search horizon."""


class SingularJacobian(NumericalFailure):
    """The lifting Jacobian restricted to the free components is singular."""


class MaxItersExceeded(NumericalFailure):
    """Newton iteration did not reach the requested residual."""


class LeftPositiveOrthant(NumericalFailure):
    """Damping could not keep the Newton iterate strictly positive."""


class LiftFailure(NumericalFailure):
    """Every fixed-index choice failed; carries the per-choice causes."""

    def __init__(self, message: str, causes: list[tuple[tuple[int, ...], Exception]]):
        super().__init__(message)
        self.causes = causes


class ProjectiveRunAborted(NumericalFailure):
    """A multiscale run stopped early; ``series`` holds the checkpoints reached."""

    def __init__(self, message: str, step_index: int, series, cause: Exception):
        super().__init__(message)
        self.step_index = step_index
        self.series = series
        self.cause = cause
