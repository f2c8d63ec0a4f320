from typing import Any, Optional


class PlannerError(Exception):
    """Base class for every error raised by the planner"""


class MdpValidationError(PlannerError, ValueError):
    """Raised when an MDP violates its structural invariants"""

    def __init__(self, message: str, violations: Optional[list] = None):
        super().__init__(message)
        self.violations = violations or []


class MultichainError(PlannerError):
    """Raised when a policy induces a chain with more than one recurrent class"""

    def __init__(self, message: str, recurrent_classes: Optional[list] = None):
        super().__init__(message)
        self.recurrent_classes = recurrent_classes or []


class DimensionMismatch(PlannerError, ValueError):
    pass


class FloorInfeasible(PlannerError, ValueError):
    pass


class LpError(PlannerError):
    """Base class for LP failures; carries the partial solution when one exists"""

    def __init__(self, message: str, solution: Any = None):
        super().__init__(message)
        self.solution = solution


class LpInfeasible(LpError):
    pass


class LpUnbounded(LpError):
    pass


class LpIterationLimit(LpError):
    pass


class CardinalityMismatch(PlannerError, ValueError):
    pass


class DomainError(PlannerError, ValueError):
    pass


class InitializationError(PlannerError):
    pass


class ProjectionFailure(PlannerError):
    pass


class GenerationFailure(PlannerError):
    pass


class LpNumericalError(LpError):
    """Raised when a basis cannot be factored accurately enough to continue"""
