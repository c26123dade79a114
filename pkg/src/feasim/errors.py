"""Exception hierarchy shared by every feasim module."""


class FeasimError(Exception):
    """Base class for all library errors."""


class InvalidStateError(FeasimError, ValueError):
    pass


class InvalidActionError(FeasimError, ValueError):
    pass


class MissingPolicyEntryError(FeasimError, KeyError):
    pass


class EmptyInputError(FeasimError, ValueError):
    pass


class UndefinedCosineError(FeasimError, ValueError):
    pass


class ConfigError(FeasimError, ValueError):
    pass


class UnsupportedError(FeasimError):
    pass


class ExpertFailureError(FeasimError):
    pass


class StateSpaceTooLargeError(FeasimError):
    """Raised by value iteration when the reachable state space exceeds its cap.

    Use :func:`feasim.solver.q_learning` for larger problems.
    """


class UnknownTrajectoryError(FeasimError, KeyError):
    pass


class DegenerateDistributionError(FeasimError, ValueError):
    pass


class DemoFormatError(FeasimError, ValueError):
    pass


class StageError(FeasimError):
    """Wraps a failure inside the experiment pipeline with the stage that raised it."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
