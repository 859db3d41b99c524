"""Exception hierarchy shared across the package."""
from __future__ import annotations


class FormationError(Exception):
    """Base class for every error raised by bearingsim."""

    code = "FormationError"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class NearZeroVector(FormationError):
    code = "NearZeroVector"


class NotSymmetric(FormationError):
    code = "NotSymmetric"


class AgentCollision(FormationError):
    code = "AgentCollision"

    def __init__(self, message: str, agents: tuple[int, int] | None = None):
        super().__init__(message)
        self.agents = agents


# graph construction
class GraphError(FormationError):
    code = "GraphError"


class TooFewLeaders(GraphError):
    code = "TooFewLeaders"


class TooFewNeighbors(GraphError):
    code = "TooFewNeighbors"


class ForwardReference(GraphError):
    code = "ForwardReference"


class DuplicateEdge(GraphError):
    code = "DuplicateEdge"


class CycleFound(GraphError):
    code = "CycleFound"

    def __init__(self, cycle: list[int]):
        super().__init__(f"directed cycle {cycle}")
        self.cycle = cycle


# bearing specification
class ParallelBearings(FormationError):
    code = "ParallelBearings"

    def __init__(self, message: str, follower: int | None = None, lambda1: float | None = None):
        super().__init__(message)
        self.follower = follower
        self.lambda1 = lambda1


class SingularSystem(FormationError):
    code = "SingularSystem"


class InfeasibleBearings(FormationError):
    code = "InfeasibleBearings"


# control laws
class CollinearNeighbors(FormationError):
    code = "CollinearNeighbors"

    def __init__(self, message: str, follower: int | None = None, lambda1: float | None = None):
        super().__init__(message)
        self.follower = follower
        self.lambda1 = lambda1


class ObstacleCoincidence(FormationError):
    code = "ObstacleCoincidence"


class DegenerateScaling(FormationError):
    code = "DegenerateScaling"


# simulation
class NonFiniteState(FormationError):
    code = "NonFiniteState"


class ProfileExhausted(FormationError):
    code = "ProfileExhausted"


# configuration
class ParseError(FormationError):
    code = "ParseError"


class ValidationError(FormationError):
    """Scenario rejected before simulation; ``violations`` lists every problem found."""

    code = "ValidationError"

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)

    def to_dict(self) -> dict:
        return {"error": self.code, "violations": self.violations}


class IoError(FormationError):
    code = "IoError"
