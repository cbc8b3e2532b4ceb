"""
Object specifications and the pure semantic engine over them.

An ObjectSpec is the declarative description of a state-based object. Binding
it to DomainBounds produces a BoundSpec: the resolved Layout plus every
predicate compiled against it. All engine entry points (leq, apply_op,
merge_states, eval_predicate) take a BoundSpec and never mutate their inputs.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

from .domain import REPLICA_DOMAIN, DomainBounds, Layout, StateSchema
from .errors import (
    BadParams,
    CheckerError,
    PreconditionViolated,
    SchemaMismatch,
    UnknownIdentifier,
    UnknownOperation,
)
from .expr import INT, BoundPredicate, Predicate, PredicateResult, Ty

logger = logging.getLogger(__name__)

StateValue = tuple
Effect = Callable[[Layout, StateValue, Dict[str, Any], Optional[str]], StateValue]
MergeFn = Callable[[Layout, StateValue, StateValue, Optional[str]], StateValue]


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # "id" or "range"
    domain: str

    def ty(self) -> Ty:
        return Ty("id", domain=self.domain) if self.kind == "id" else INT


@dataclass(frozen=True)
class OperationSpec:
    name: str
    params: Tuple[Param, ...]
    precondition: Predicate
    effect: Effect
    # effect depends on the replica it runs at, even when the precondition does not
    reads_me: bool = False

    @property
    def me_sensitive(self) -> bool:
        return self.reads_me or self.precondition.uses_me()

    def signature(self) -> str:
        return f"{self.name}({', '.join(p.name for p in self.params)})"


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    schema: StateSchema
    initial_state: Optional[Callable[[Layout], StateValue]] = None
    leq: Optional[Predicate] = None
    operations: Tuple[OperationSpec, ...] = ()
    merge: Optional[MergeFn] = None
    pre_merge: Optional[Predicate] = None
    invariant: Optional[Predicate] = None
    description: str = ""
    variant: Dict[str, str] = field(default_factory=dict)

    def operation(self, name: str) -> OperationSpec:
        for op in self.operations:
            if op.name == name:
                return op
        raise UnknownOperation(name)

    def bind(self, bounds: DomainBounds) -> "BoundSpec":
        return BoundSpec(self, bounds)


@dataclass(frozen=True)
class OpInstance:
    op: OperationSpec
    params: Tuple[Tuple[str, Any], ...]

    @property
    def name(self) -> str:
        return self.op.name

    def param_dict(self) -> Dict[str, Any]:
        return dict(self.params)

    def render(self) -> str:
        return f"{self.op.name}({', '.join(str(v) for _, v in self.params)})"


class BoundSpec:
    """An ObjectSpec resolved under concrete bounds.

    Predicate compilation problems are collected in `problems` instead of
    raised, so the well-formedness stage can report all of them; touching a
    broken part afterwards re-raises its error.
    """

    PREDICATES = ("leq", "pre_merge", "invariant")

    def __init__(self, spec: ObjectSpec, bounds: DomainBounds):
        self.spec = spec
        self.bounds = bounds
        self.layout = Layout(spec.schema, bounds)
        self.problems: List[Tuple[str, CheckerError]] = []
        self._compiled: Dict[str, BoundPredicate] = {}
        self._broken: Dict[str, CheckerError] = {}
        arities = {"leq": 2, "pre_merge": 2, "invariant": 1}
        for part in self.PREDICATES:
            p = getattr(spec, part)
            if p is None:
                continue
            if p.arity != arities[part]:
                self._fail(part, SchemaMismatch(f"{part} must have arity {arities[part]}, got {p.arity}"))
                continue
            self._compile(part, p)
        for op in spec.operations:
            self._compile(f"{op.name}.pre", op.precondition, {p.name: p.ty() for p in op.params})

    def _compile(self, part: str, p: Predicate, params: Optional[Dict[str, Ty]] = None):
        try:
            self._compiled[part] = p.bind(self.layout, part, params)
        except CheckerError as e:
            self._fail(part, e)

    def _fail(self, part: str, e: CheckerError):
        logger.debug(f"{self.spec.name}: {part} does not compile: {e.message}")
        self.problems.append((part, e))
        self._broken[part] = e

    def compiled(self, part: str) -> BoundPredicate:
        if part in self._broken:
            raise self._broken[part]
        if part not in self._compiled:
            raise UnknownIdentifier(part, f"spec '{self.spec.name}'")
        return self._compiled[part]

    def has(self, part: str) -> bool:
        return part in self._compiled

    @property
    def replicas(self) -> Tuple[str, ...]:
        return self.layout.ids[REPLICA_DOMAIN]

    def initial(self) -> StateValue:
        if self.spec.initial_state is None:
            raise SchemaMismatch(f"spec '{self.spec.name}' has no initial state")
        return self.spec.initial_state(self.layout)

    def param_values(self, p: Param) -> List[Any]:
        if p.kind == "id":
            return list(self.layout.domain_values(p.domain))
        return self.layout.range_values(p.domain)

    def instances(self, op: OperationSpec) -> List[OpInstance]:
        """Every parameter binding of `op` over its declared domains, in canonical order."""
        names = [p.name for p in op.params]
        pools = [self.param_values(p) for p in op.params]
        return [OpInstance(op, tuple(zip(names, combo))) for combo in itertools.product(*pools)]

    def all_instances(self) -> Iterator[OpInstance]:
        for op in self.spec.operations:
            yield from self.instances(op)

    def check_params(self, op: OperationSpec, params: Dict[str, Any]) -> None:
        declared = {p.name: p for p in op.params}
        extra = set(params) - set(declared)
        missing = set(declared) - set(params)
        if extra or missing:
            raise BadParams(
                f"{op.name}: expected parameters {sorted(declared)}, got {sorted(params)}",
                operation=op.name,
            )
        for name, p in declared.items():
            if params[name] not in self.param_values(p):
                raise BadParams(f"{op.name}: {name}={params[name]!r} is outside domain '{p.domain}'",
                                operation=op.name)

    def check_me(self, me: Optional[str]) -> None:
        if me is not None and me not in self.replicas:
            raise BadParams(f"unknown replica '{me}'", replicas=list(self.replicas))


# ── Engine entry points ───────────────────────────────────────────────────────

def leq(bound: BoundSpec, a: StateValue, b: StateValue) -> bool:
    """Truth of the comparison function with `a` as the lower and `b` as the higher operand."""
    bound.layout.check(a, "lower operand")
    bound.layout.check(b, "higher operand")
    return bound.compiled("leq").holds((a, b))


def precondition(bound: BoundSpec, inst: Union[OpInstance, str], s: StateValue, me: Optional[str],
                 params: Optional[Dict[str, Any]] = None) -> PredicateResult:
    if isinstance(inst, OpInstance):
        op, params = inst.op, inst.param_dict()
    else:
        op = bound.spec.operation(inst)
    return bound.compiled(f"{op.name}.pre").evaluate((s,), me, params or {})


def apply_op(bound: BoundSpec, op_name: str, params: Dict[str, Any], me: Optional[str],
             s: StateValue) -> StateValue:
    op = bound.spec.operation(op_name)
    bound.check_params(op, params)
    bound.check_me(me)
    bound.layout.check(s, "operation input")
    result = bound.compiled(f"{op.name}.pre").evaluate((s,), me, params)
    if not result.value:
        raise PreconditionViolated(op.name, result.failing(), list(result.clauses))
    return op.effect(bound.layout, s, params, me)


def merge_states(bound: BoundSpec, local: StateValue, remote: StateValue, me: Optional[str]) -> StateValue:
    if bound.spec.merge is None:
        raise SchemaMismatch(f"spec '{bound.spec.name}' has no merge function")
    bound.check_me(me)
    bound.layout.check(local, "merge local state")
    bound.layout.check(remote, "merge remote state")
    return bound.spec.merge(bound.layout, local, remote, me)


def eval_predicate(bound: BoundSpec, p: Union[str, Predicate], s: StateValue,
                   s2: Optional[StateValue] = None, me: Optional[str] = None,
                   params: Optional[Dict[str, Any]] = None) -> PredicateResult:
    """Evaluate a spec predicate (by part name) or an ad-hoc Predicate with a clause breakdown."""
    compiled = bound.compiled(p) if isinstance(p, str) else p.bind(bound.layout, "predicate")
    states: Sequence[StateValue] = (s,) if s2 is None else (s, s2)
    for st in states:
        bound.layout.check(st, "predicate operand")
    return compiled.evaluate(states, me, params)
