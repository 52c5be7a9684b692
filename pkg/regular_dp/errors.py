"""Exception hierarchy. Each error also derives from the closest builtin."""

from typing import Optional


class RegularDpError(Exception):
    """Base class for every error raised by regular_dp."""


class ModelValidationError(RegularDpError, ValueError):
    """A model table breaks an invariant; carries the offending coordinates."""

    def __init__(self, message: str, state: Optional[int] = None, control: Optional[int] = None):
        self.state = state
        self.control = control
        where = []
        if state is not None:
            where.append(f"state={state}")
        if control is not None:
            where.append(f"control={control}")
        suffix = f" [{', '.join(where)}]" if where else ""
        super().__init__(f"{message}{suffix}")


class PolicyError(RegularDpError, ValueError):
    pass


class ShapeError(RegularDpError, ValueError):
    pass


class MissingStopSetError(RegularDpError, ValueError):
    pass


class PreconditionError(RegularDpError, ValueError):
    pass


class EnumerationLimitError(RegularDpError, RuntimeError):
    pass


class GridLimitError(RegularDpError, RuntimeError):
    pass


class ImproperPolicyError(RegularDpError, ArithmeticError):
    """The evaluation system of a policy is singular."""


class SolverError(RegularDpError, RuntimeError):
    pass


class LpError(RegularDpError, RuntimeError):
    pass
