"""Exceptions raised by the lattice engine, the checker and the simulator."""
from typing import Any, Dict, List, Optional


class CheckerError(Exception):
    """Base class; `details` carries structured context for reports."""

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details


class DomainTooLarge(CheckerError):
    def __init__(self, cardinality: int, cap: int, what: str = "state domain"):
        super().__init__(
            f"{what} has {cardinality} elements, above enumeration_cap={cap}",
            cardinality=cardinality,
            cap=cap,
        )
        self.cardinality = cardinality
        self.cap = cap


class UnboundedComponent(CheckerError):
    def __init__(self, component: str, reason: str = "no bound declared"):
        super().__init__(f"component '{component}': {reason}", component=component)
        self.component = component


class SchemaMismatch(CheckerError):
    pass


class UnknownIdentifier(CheckerError):
    def __init__(self, name: str, where: str = ""):
        suffix = f" in {where}" if where else ""
        super().__init__(f"unknown identifier '{name}'{suffix}", name=name, where=where)
        self.name = name


class UndefinedValue(CheckerError):
    pass


class UnknownOperation(CheckerError):
    def __init__(self, name: str):
        super().__init__(f"unknown operation '{name}'", operation=name)
        self.name = name


class BadParams(CheckerError):
    pass


class PreconditionViolated(CheckerError):
    def __init__(self, operation: str, failing: List[str], clauses: Optional[list] = None):
        super().__init__(
            f"precondition of '{operation}' is false: {', '.join(failing)}",
            operation=operation,
            failing=failing,
        )
        self.operation = operation
        self.failing = failing
        self.clauses = clauses or []


class BadBounds(CheckerError):
    pass


class UnknownSpec(CheckerError):
    def __init__(self, name: str, known: List[str]):
        super().__init__(f"unknown spec '{name}' (known: {', '.join(known)})", name=name)
        self.name = name


class MalformedEvent(CheckerError):
    pass


class UnknownMessage(CheckerError):
    def __init__(self, msg_id: Any):
        super().__init__(f"no in-flight message '{msg_id}'", msg_id=msg_id)
        self.msg_id = msg_id
