"""
State schemas, domain bounds and the finite enumeration of states.

A state value is a plain immutable tree of Python values:

- OrderedEnum  -> level name (str)
- Flag         -> bool
- BoundedInt   -> int
- OptionalRef  -> None (bottom) or an id string
- FixedMap     -> tuple of sub-values, one per key in key-domain order
- Record       -> tuple of sub-values, one per field in declaration order

A whole state is the Record of the schema's top-level components. Tuples give
value semantics for free: nothing in the engine can mutate a state in place.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ValidationError, conint, validator

from .errors import BadBounds, DomainTooLarge, SchemaMismatch, UnboundedComponent, UnknownIdentifier

logger = logging.getLogger(__name__)

REPLICA_DOMAIN = "replica"


# ── Schema declarations ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class OrderedEnum:
    levels: Tuple[str, ...]


@dataclass(frozen=True)
class Flag:
    # which boolean is the lattice top; enumeration order is always [False, True]
    top: bool = True


@dataclass(frozen=True)
class BoundedInt:
    range: str
    lo: Optional[int] = None
    hi: Optional[int] = None


@dataclass(frozen=True)
class OptionalRef:
    domain: str


@dataclass(frozen=True)
class FixedMap:
    domain: str
    value: "Component"


@dataclass(frozen=True)
class Record:
    fields: Tuple[Tuple[str, "Component"], ...]


Component = Union[OrderedEnum, Flag, BoundedInt, OptionalRef, FixedMap, Record]


@dataclass(frozen=True)
class IdDomain:
    name: str
    prefix: str


@dataclass(frozen=True)
class StateSchema:
    components: Tuple[Tuple[str, Component], ...]
    id_domains: Tuple[IdDomain, ...] = field(default_factory=tuple)

    @classmethod
    def of(cls, components: Sequence[Tuple[str, Component]], id_domains: Sequence[IdDomain] = ()):
        return cls(tuple(components), tuple(id_domains))

    def component_names(self) -> List[str]:
        return [name for name, _ in self.components]

    def domain_names(self) -> List[str]:
        return [REPLICA_DOMAIN] + [d.name for d in self.id_domains]


class DomainBounds(BaseModel):
    """Finite bounds that make every schema component enumerable."""

    replica_count: conint(ge=1) = 2
    domains: Dict[str, conint(ge=1)] = {}
    ranges: Dict[str, Tuple[int, int]] = {}
    enumeration_cap: conint(gt=0) = 5_000_000

    @validator("ranges")
    def _ranges_ordered(cls, v):
        for name, (lo, hi) in v.items():
            if lo > hi:
                raise ValueError(f"range '{name}' has lo={lo} > hi={hi}")
        return v

    def cardinality_of(self, domain: str) -> Optional[int]:
        if domain == REPLICA_DOMAIN:
            return self.replica_count
        return self.domains.get(domain)

    def replica_ids(self) -> Tuple[str, ...]:
        return tuple(f"r{k}" for k in range(1, self.replica_count + 1))


def make_bounds(**kwargs) -> DomainBounds:
    """Build bounds, turning pydantic validation errors into BadBounds."""
    try:
        return DomainBounds(**kwargs)
    except ValidationError as e:
        raise BadBounds(f"invalid bounds: {e}") from e


# ── Resolved schema ───────────────────────────────────────────────────────────

class Node:
    """A schema component resolved against concrete bounds."""

    kind = "node"

    def values(self) -> List[Any]:
        raise NotImplementedError

    def cardinality(self) -> int:
        raise NotImplementedError

    def conforms(self, value: Any) -> bool:
        raise NotImplementedError

    def to_tree(self, value: Any) -> Any:
        return value

    def from_tree(self, tree: Any, path: str) -> Any:
        if not self.conforms(tree):
            raise SchemaMismatch(f"{path or 'state'}: {tree!r} does not conform", path=path)
        return tree


class EnumNode(Node):
    kind = "enum"

    def __init__(self, levels: Tuple[str, ...]):
        self.levels = levels
        self.rank = {lvl: i for i, lvl in enumerate(levels)}

    def values(self):
        return list(self.levels)

    def cardinality(self):
        return len(self.levels)

    def conforms(self, value):
        return isinstance(value, str) and value in self.rank


class FlagNode(Node):
    kind = "flag"

    def __init__(self, top: bool):
        self.top = top

    def values(self):
        return [False, True]

    def cardinality(self):
        return 2

    def conforms(self, value):
        return isinstance(value, bool)


class IntNode(Node):
    kind = "int"

    def __init__(self, lo: int, hi: int):
        self.lo, self.hi = lo, hi

    def values(self):
        return list(range(self.lo, self.hi + 1))

    def cardinality(self):
        return self.hi - self.lo + 1

    def conforms(self, value):
        return isinstance(value, int) and not isinstance(value, bool) and self.lo <= value <= self.hi


class RefNode(Node):
    kind = "ref"

    def __init__(self, domain: str, ids: Tuple[str, ...]):
        self.domain = domain
        self.ids = ids

    def values(self):
        return [None] + list(self.ids)

    def cardinality(self):
        return len(self.ids) + 1

    def conforms(self, value):
        return value is None or value in self.ids


class MapNode(Node):
    kind = "map"

    def __init__(self, domain: str, keys: Tuple[str, ...], value: Node):
        self.domain = domain
        self.keys = keys
        self.key_index = {k: i for i, k in enumerate(keys)}
        self.value = value

    def values(self):
        return [tuple(p) for p in itertools.product(self.value.values(), repeat=len(self.keys))]

    def cardinality(self):
        return self.value.cardinality() ** len(self.keys)

    def conforms(self, value):
        return (
            isinstance(value, tuple)
            and len(value) == len(self.keys)
            and all(self.value.conforms(v) for v in value)
        )

    def to_tree(self, value):
        return {k: self.value.to_tree(v) for k, v in zip(self.keys, value)}

    def from_tree(self, tree, path):
        if not isinstance(tree, dict) or set(tree) != set(self.keys):
            raise SchemaMismatch(f"{path}: expected keys {list(self.keys)}", path=path)
        return tuple(self.value.from_tree(tree[k], f"{path}.{k}") for k in self.keys)


class RecordNode(Node):
    kind = "record"

    def __init__(self, names: Tuple[str, ...], nodes: Tuple[Node, ...]):
        self.names = names
        self.nodes = nodes
        self.index = {n: i for i, n in enumerate(names)}

    def values(self):
        return [tuple(p) for p in itertools.product(*(n.values() for n in self.nodes))]

    def cardinality(self):
        total = 1
        for n in self.nodes:
            total *= n.cardinality()
        return total

    def conforms(self, value):
        return (
            isinstance(value, tuple)
            and len(value) == len(self.nodes)
            and all(n.conforms(v) for n, v in zip(self.nodes, value))
        )

    def to_tree(self, value):
        return {name: node.to_tree(v) for name, node, v in zip(self.names, self.nodes, value)}

    def from_tree(self, tree, path):
        if not isinstance(tree, dict) or set(tree) != set(self.names):
            raise SchemaMismatch(f"{path or 'state'}: expected fields {list(self.names)}", path=path)
        prefix = f"{path}." if path else ""
        return tuple(node.from_tree(tree[name], f"{prefix}{name}") for name, node in zip(self.names, self.nodes))


class Layout:
    """A StateSchema resolved under DomainBounds: ids, ranges and value trees."""

    def __init__(self, schema: StateSchema, bounds: DomainBounds):
        self.schema = schema
        self.bounds = bounds
        self.ids: Dict[str, Tuple[str, ...]] = {REPLICA_DOMAIN: bounds.replica_ids()}
        for d in schema.id_domains:
            n = bounds.cardinality_of(d.name)
            if n is None:
                raise UnboundedComponent(d.name, "id domain has no cardinality in bounds")
            self.ids[d.name] = tuple(f"{d.prefix}{k}" for k in range(1, n + 1))
        self.id_rank: Dict[str, Dict[str, int]] = {
            name: {v: i for i, v in enumerate(ids)} for name, ids in self.ids.items()
        }
        self.root = RecordNode(
            tuple(name for name, _ in schema.components),
            tuple(self._resolve(comp, name) for name, comp in schema.components),
        )

    def _resolve(self, comp: Component, where: str) -> Node:
        if isinstance(comp, OrderedEnum):
            return EnumNode(comp.levels)
        if isinstance(comp, Flag):
            return FlagNode(comp.top)
        if isinstance(comp, BoundedInt):
            if comp.range in self.bounds.ranges:
                lo, hi = self.bounds.ranges[comp.range]
            elif comp.lo is not None and comp.hi is not None:
                lo, hi = comp.lo, comp.hi
            else:
                raise UnboundedComponent(where, f"range '{comp.range}' has no bound")
            return IntNode(lo, hi)
        if isinstance(comp, OptionalRef):
            return RefNode(comp.domain, self._domain(comp.domain, where))
        if isinstance(comp, FixedMap):
            keys = self._domain(comp.domain, where)
            return MapNode(comp.domain, keys, self._resolve(comp.value, f"{where}[]"))
        if isinstance(comp, Record):
            return RecordNode(
                tuple(n for n, _ in comp.fields),
                tuple(self._resolve(c, f"{where}.{n}") for n, c in comp.fields),
            )
        raise SchemaMismatch(f"{where}: unsupported component {comp!r}")

    def _domain(self, name: str, where: str) -> Tuple[str, ...]:
        if name not in self.ids:
            raise UnknownIdentifier(name, f"domain of {where}")
        return self.ids[name]

    # ── enumeration ──

    def cardinality(self) -> int:
        return self.root.cardinality()

    def enumerate(self) -> List[tuple]:
        total = self.cardinality()
        cap = self.bounds.enumeration_cap
        if total > cap:
            raise DomainTooLarge(total, cap)
        logger.debug(f"Enumerating {total} states")
        return self.root.values()

    # ── values ──

    def component(self, name: str) -> Tuple[int, Node]:
        if name not in self.root.index:
            raise UnknownIdentifier(name, "state schema")
        i = self.root.index[name]
        return i, self.root.nodes[i]

    def conforms(self, state: Any) -> bool:
        return self.root.conforms(state)

    def check(self, state: Any, what: str = "state") -> None:
        if not self.root.conforms(state):
            raise SchemaMismatch(f"{what} does not conform to the schema", value=repr(state))

    def to_tree(self, state: tuple) -> Dict[str, Any]:
        return self.root.to_tree(state)

    def from_tree(self, tree: Dict[str, Any]) -> tuple:
        return self.root.from_tree(tree, "")

    def _walk(self, path: Sequence[Union[str, int]]):
        node: Node = self.root
        for step in path:
            if isinstance(node, RecordNode):
                if step not in node.index:
                    raise UnknownIdentifier(str(step), "record")
                i = node.index[step]
                yield node, i
                node = node.nodes[i]
            elif isinstance(node, MapNode):
                if step not in node.key_index:
                    raise UnknownIdentifier(str(step), f"domain '{node.domain}'")
                yield node, node.key_index[step]
                node = node.value
            else:
                raise SchemaMismatch(f"cannot index {node.kind} with {step!r}")

    def read(self, state: tuple, *path) -> Any:
        value = state
        for _, i in self._walk(path):
            value = value[i]
        return value

    def update(self, state: tuple, *path_and_value) -> tuple:
        """Return a copy of `state` with the value at `path` replaced."""
        *path, new = path_and_value
        steps = [i for _, i in self._walk(path)]
        return _replace(state, steps, new)

    def assign(self, state: tuple, **components) -> tuple:
        out = list(state)
        for name, value in components.items():
            i, _ = self.component(name)
            out[i] = value
        return tuple(out)

    # ── ids ──

    def home_replica(self, domain: str, ident: str) -> str:
        """Round-robin owner: the k-th id of a domain belongs to replica k mod R."""
        replicas = self.ids[REPLICA_DOMAIN]
        return replicas[self.id_rank[domain][ident] % len(replicas)]

    def domain_values(self, domain: str) -> Tuple[str, ...]:
        if domain not in self.ids:
            raise UnknownIdentifier(domain, "id domains")
        return self.ids[domain]

    def range_values(self, name: str) -> List[int]:
        if name not in self.bounds.ranges:
            raise UnboundedComponent(name, "range has no bound")
        lo, hi = self.bounds.ranges[name]
        return list(range(lo, hi + 1))


def _replace(value: tuple, steps: List[int], new: Any) -> Any:
    if not steps:
        return new
    i = steps[0]
    return value[:i] + (_replace(value[i], steps[1:], new),) + value[i + 1:]


def enumerate_states(schema: StateSchema, bounds: DomainBounds) -> List[tuple]:
    """Every schema-conforming state exactly once, lexicographic in declaration order."""
    return Layout(schema, bounds).enumerate()


def analytic_cardinality(schema: StateSchema, bounds: DomainBounds) -> int:
    return Layout(schema, bounds).cardinality()
