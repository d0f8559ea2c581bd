"""Exception types shared across the planner."""


class PlannerError(Exception):
    """Base class for all planner-specific failures."""


class LtlSyntaxError(PlannerError):
    def __init__(self, message, line=None, col=None):
        loc = "" if line is None else f" at line {line}, column {col}"
        super().__init__(f"{message}{loc}")
        self.line = line
        self.col = col


class NotCoSafeError(PlannerError):
    """Formula leaves the eventually/until/next fragment after normalization."""


class StateCapExceeded(PlannerError):
    """Automaton construction exceeded the configured state budget."""


class HierarchyError(PlannerError):
    """Base class for hierarchical specification rule violations."""


class Rule1Violation(HierarchyError):
    pass


class Rule2Violation(HierarchyError):
    pass


class Rule3Violation(HierarchyError):
    pass


class EmptyPolytopeError(PlannerError):
    pass


class NumericalFailure(PlannerError):
    pass


class NoFeasibleSeed(PlannerError):
    pass


class SeedInCollision(PlannerError):
    pass


class InitialInCollision(PlannerError):
    pass


class NotConnected(PlannerError):
    """Sampling-based search failed to connect two configurations."""


class ProgressStall(PlannerError):
    """Region chaining stopped advancing along the guide path."""


class EmptyLanguage(PlannerError):
    """No accepting product state is reachable."""

    def __init__(self, message, blocking=None):
        super().__init__(message)
        self.blocking = blocking


class VerificationFailed(PlannerError):
    """A produced plan failed independent re-verification; a planner bug."""


class Infeasible(PlannerError):
    pass


class BudgetExceeded(PlannerError):
    def __init__(self, message, incumbent=None):
        super().__init__(message)
        self.incumbent = incumbent


class SchemaError(PlannerError):
    """Scenario or plan file does not match the documented schema."""
