"""
Closed expression grammar for invariants, merge preconditions, operation
preconditions and comparison functions.

Expressions are immutable trees built with the helper functions at the bottom
of this module. `Predicate.bind(layout)` type-checks a predicate against a
resolved schema and compiles each clause to a closure; unknown components,
fields, domains or variables raise UnknownIdentifier at bind time.

State slots: index 0 is the local (unprimed, lower) state, index 1 the remote
(primed, higher) state.
"""
import operator
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

from .domain import REPLICA_DOMAIN, EnumNode, FlagNode, IntNode, Layout, MapNode, RecordNode, RefNode
from .errors import SchemaMismatch, UndefinedValue, UnknownIdentifier


class Env:
    __slots__ = ("states", "me", "vars")

    def __init__(self, states: Sequence[tuple], me: Optional[str] = None, vars: Optional[Dict[str, Any]] = None):
        self.states = states
        self.me = me
        self.vars = dict(vars) if vars else {}


@dataclass(frozen=True)
class Ty:
    kind: str  # bool | int | enum | id | bottom | level | map | record
    node: Any = None
    domain: Optional[str] = None
    level: Optional[str] = None


BOOL = Ty("bool")
INT = Ty("int")


def _ty_of(node) -> Ty:
    if isinstance(node, EnumNode):
        return Ty("enum", node=node)
    if isinstance(node, FlagNode):
        return BOOL
    if isinstance(node, IntNode):
        return INT
    if isinstance(node, RefNode):
        return Ty("id", domain=node.domain)
    if isinstance(node, MapNode):
        return Ty("map", node=node)
    if isinstance(node, RecordNode):
        return Ty("record", node=node)
    raise SchemaMismatch(f"no expression type for {node!r}")


class Cx:
    def __init__(self, layout: Layout, arity: int, vars: Dict[str, Ty], where: str):
        self.layout = layout
        self.arity = arity
        self.vars = vars
        self.where = where

    def bind(self, name: str, ty: Ty) -> "Cx":
        return Cx(self.layout, self.arity, {**self.vars, name: ty}, self.where)


Compiled = Tuple[Callable[[Env], Any], Ty]


class Expr:
    def compile(self, cx: Cx) -> Compiled:
        raise NotImplementedError

    def render(self) -> str:
        raise NotImplementedError

    def children(self) -> Tuple["Expr", ...]:
        return ()

    def walk(self) -> Iterator["Expr"]:
        yield self
        for c in self.children():
            yield from c.walk()

    def _wrap(self) -> str:
        return self.render()

    def __str__(self):
        return self.render()


class _Atomic(Expr):
    pass


@dataclass(frozen=True)
class Const(_Atomic):
    value: Union[bool, int]

    def compile(self, cx):
        v = self.value
        return (lambda env: v), (BOOL if isinstance(v, bool) else INT)

    def render(self):
        return str(self.value).lower() if isinstance(self.value, bool) else str(self.value)


@dataclass(frozen=True)
class Level(_Atomic):
    name: str

    def compile(self, cx):
        v = self.name
        return (lambda env: v), Ty("level", level=v)

    def render(self):
        return self.name


@dataclass(frozen=True)
class Bottom(_Atomic):
    def compile(self, cx):
        return (lambda env: None), Ty("bottom")

    def render(self):
        return "⊥"


@dataclass(frozen=True)
class Me(_Atomic):
    def compile(self, cx):
        return (lambda env: env.me), Ty("id", domain=REPLICA_DOMAIN)

    def render(self):
        return "me"


@dataclass(frozen=True)
class Var(_Atomic):
    name: str

    def compile(self, cx):
        if self.name not in cx.vars:
            raise UnknownIdentifier(self.name, cx.where)
        name = self.name
        return (lambda env: env.vars[name]), cx.vars[name]

    def render(self):
        return self.name


@dataclass(frozen=True)
class Id(_Atomic):
    """A concrete identifier, e.g. bid b1 or replica r2."""

    domain: str
    value: str

    def compile(self, cx):
        if self.domain not in cx.layout.ids:
            raise UnknownIdentifier(self.domain, cx.where)
        if self.value not in cx.layout.ids[self.domain]:
            raise UnknownIdentifier(self.value, cx.where)
        v = self.value
        return (lambda env: v), Ty("id", domain=self.domain)

    def render(self):
        return self.value


@dataclass(frozen=True)
class Comp(_Atomic):
    name: str
    which: int = 0

    def compile(self, cx):
        if self.which >= cx.arity:
            raise SchemaMismatch(f"{self.render()} needs a state slot {self.which} in {cx.where}")
        if self.name not in cx.layout.root.index:
            raise UnknownIdentifier(self.name, cx.where)
        i, node = cx.layout.component(self.name)
        w = self.which
        return (lambda env: env.states[w][i]), _ty_of(node)

    def render(self):
        return self.name + "'" * self.which


@dataclass(frozen=True)
class Get(Expr):
    base: Expr
    key: Expr

    def children(self):
        return (self.base, self.key)

    def compile(self, cx):
        bf, bt = self.base.compile(cx)
        if bt.kind != "map":
            raise SchemaMismatch(f"{self.base.render()} is not a map in {cx.where}")
        node: MapNode = bt.node
        key = self.key
        # an unbound name that is one of the map's keys reads as that key
        if isinstance(key, Var) and key.name not in cx.vars and key.name in node.key_index:
            key = Id(node.domain, key.name)
        kf, kt = key.compile(cx)
        if kt.kind != "id" or kt.domain != node.domain:
            raise SchemaMismatch(f"{self.key.render()} is not a '{node.domain}' id in {cx.where}")
        index = node.key_index
        shown = self.render()

        def get(env):
            k = kf(env)
            if k is None:
                raise UndefinedValue(f"{shown}: key is ⊥")
            return bf(env)[index[k]]

        return get, _ty_of(node.value)

    def render(self):
        return f"{self.base.render()}[{self.key.render()}]"


@dataclass(frozen=True)
class Attr(Expr):
    base: Expr
    name: str

    def children(self):
        return (self.base,)

    def compile(self, cx):
        bf, bt = self.base.compile(cx)
        if bt.kind != "record":
            raise SchemaMismatch(f"{self.base.render()} is not a record in {cx.where}")
        node: RecordNode = bt.node
        if self.name not in node.index:
            raise UnknownIdentifier(self.name, cx.where)
        i = node.index[self.name]
        return (lambda env: bf(env)[i]), _ty_of(node.nodes[i])

    def render(self):
        base = self.base.render()
        # primes stay on the component name: bids'[b].amount
        return f"{base}.{self.name}"


@dataclass(frozen=True)
class Not(Expr):
    a: Expr

    def children(self):
        return (self.a,)

    def compile(self, cx):
        f = _bool(self.a, cx)
        return (lambda env: not f(env)), BOOL

    def render(self):
        return f"¬{self.a._wrap()}"


@dataclass(frozen=True)
class And(Expr):
    items: Tuple[Expr, ...]

    def children(self):
        return self.items

    def compile(self, cx):
        fs = [_bool(e, cx) for e in self.items]
        return (lambda env: all(f(env) for f in fs)), BOOL

    def render(self):
        return " ∧ ".join(e._wrap() for e in self.items) if self.items else "true"

    def _wrap(self):
        return f"({self.render()})" if len(self.items) > 1 else self.render()


@dataclass(frozen=True)
class Or(Expr):
    items: Tuple[Expr, ...]

    def children(self):
        return self.items

    def compile(self, cx):
        fs = [_bool(e, cx) for e in self.items]
        return (lambda env: any(f(env) for f in fs)), BOOL

    def render(self):
        return " ∨ ".join(e._wrap() for e in self.items) if self.items else "false"

    def _wrap(self):
        return f"({self.render()})" if len(self.items) > 1 else self.render()


@dataclass(frozen=True)
class Implies(Expr):
    a: Expr
    b: Expr

    def children(self):
        return (self.a, self.b)

    def compile(self, cx):
        fa, fb = _bool(self.a, cx), _bool(self.b, cx)
        return (lambda env: (not fa(env)) or fb(env)), BOOL

    def render(self):
        return f"{self.a._wrap()} ⟹ {self.b._wrap()}"

    def _wrap(self):
        return f"({self.render()})"


_CMP = {
    "==": (operator.eq, "="),
    "!=": (operator.ne, "≠"),
    "<": (operator.lt, "<"),
    "<=": (operator.le, "≤"),
    ">": (operator.gt, ">"),
    ">=": (operator.ge, "≥"),
}


@dataclass(frozen=True)
class Cmp(Expr):
    op: str
    a: Expr
    b: Expr

    def children(self):
        return (self.a, self.b)

    def compile(self, cx):
        fa, ta = self.a.compile(cx)
        fb, tb = self.b.compile(cx)
        fn = _CMP[self.op][0]
        key = _order_key(ta, tb, self, cx)
        if key is None:
            return (lambda env: fn(fa(env), fb(env))), BOOL
        return (lambda env: fn(key(fa(env)), key(fb(env)))), BOOL

    def render(self):
        return f"{self.a._wrap()} {_CMP[self.op][1]} {self.b._wrap()}"

    def _wrap(self):
        return f"({self.render()})"


def _order_key(ta: Ty, tb: Ty, e: Cmp, cx: Cx) -> Optional[Callable[[Any], Any]]:
    kinds = {ta.kind, tb.kind}
    if "enum" in kinds:
        node: EnumNode = (ta if ta.kind == "enum" else tb).node
        other = tb if ta.kind == "enum" else ta
        if other.kind == "level" and other.level not in node.rank:
            raise UnknownIdentifier(other.level, cx.where)
        if other.kind not in ("enum", "level"):
            raise SchemaMismatch(f"cannot compare {e.render()} in {cx.where}")
        if e.op in ("==", "!="):
            return None
        rank = node.rank
        return rank.__getitem__
    if kinds & {"id", "bottom"}:
        if not kinds <= {"id", "bottom"}:
            raise SchemaMismatch(f"cannot compare {e.render()} in {cx.where}")
        domains = {t.domain for t in (ta, tb) if t.kind == "id"}
        if len(domains) > 1:
            raise SchemaMismatch(f"ids of different domains in {e.render()} ({cx.where})")
        if e.op in ("==", "!=") or not domains:
            return None
        rank = cx.layout.id_rank[domains.pop()]
        return lambda v: -1 if v is None else rank[v]
    if not kinds <= {"int", "bool"}:
        raise SchemaMismatch(f"cannot compare {e.render()} in {cx.where}")
    return None


_ARITH = {"+": operator.add, "-": operator.sub, "max": max, "min": min}


@dataclass(frozen=True)
class Arith(Expr):
    op: str
    a: Expr
    b: Expr

    def children(self):
        return (self.a, self.b)

    def compile(self, cx):
        fa, ta = self.a.compile(cx)
        fb, tb = self.b.compile(cx)
        if ta.kind != "int" or tb.kind != "int":
            raise SchemaMismatch(f"arithmetic on non-integers in {self.render()} ({cx.where})")
        fn = _ARITH[self.op]
        return (lambda env: fn(fa(env), fb(env))), INT

    def render(self):
        if self.op in ("max", "min"):
            return f"{self.op}({self.a.render()}, {self.b.render()})"
        return f"{self.a._wrap()} {self.op} {self.b._wrap()}"

    def _wrap(self):
        return self.render() if self.op in ("max", "min") else f"({self.render()})"


@dataclass(frozen=True)
class Quant(Expr):
    kind: str  # forall | exists
    var: str
    domain: str
    body: Expr

    def children(self):
        return (self.body,)

    def compile(self, cx):
        if self.domain not in cx.layout.ids:
            raise UnknownIdentifier(self.domain, cx.where)
        values = cx.layout.ids[self.domain]
        body = _bool(self.body, cx.bind(self.var, Ty("id", domain=self.domain)))
        var = self.var
        want_all = self.kind == "forall"

        def quant(env):
            saved = env.vars.get(var, _MISSING)
            try:
                for v in values:
                    env.vars[var] = v
                    if bool(body(env)) != want_all:
                        return not want_all
                return want_all
            finally:
                if saved is _MISSING:
                    env.vars.pop(var, None)
                else:
                    env.vars[var] = saved

        return quant, BOOL

    def witness(self, cx: Cx, env: Env) -> Optional[str]:
        """First id that decides the quantifier (a falsifier for ∀, a witness for ∃)."""
        body = _bool(self.body, cx.bind(self.var, Ty("id", domain=self.domain)))
        for v in cx.layout.ids[self.domain]:
            local = Env(env.states, env.me, {**env.vars, self.var: v})
            if bool(body(local)) != (self.kind == "forall"):
                return v
        return None

    def render(self):
        sym = "∀" if self.kind == "forall" else "∃"
        return f"{sym}{self.var}. {self.body._wrap()}"

    def _wrap(self):
        return f"({self.render()})"


@dataclass(frozen=True)
class Home(Expr):
    """Replica that owns an id (round-robin assignment over the replicas)."""

    a: Expr

    def children(self):
        return (self.a,)

    def compile(self, cx):
        fa, ta = self.a.compile(cx)
        if ta.kind != "id":
            raise SchemaMismatch(f"home() of a non-id in {cx.where}")
        table = {v: cx.layout.home_replica(ta.domain, v) for v in cx.layout.ids[ta.domain]}
        shown = self.render()

        def owner(env):
            v = fa(env)
            if v is None:
                raise UndefinedValue(f"{shown}: id is ⊥")
            return table[v]

        return owner, Ty("id", domain=REPLICA_DOMAIN)

    def render(self):
        return f"home({self.a.render()})"


_MISSING = object()


def _bool(e: Expr, cx: Cx) -> Callable[[Env], Any]:
    f, t = e.compile(cx)
    if t.kind != "bool":
        raise SchemaMismatch(f"{e.render()} is not boolean in {cx.where}")
    return f


# ── Predicates ────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Clause:
    label: str
    expr: Expr


@dataclass(frozen=True)
class ClauseResult:
    label: str
    value: bool
    detail: Tuple[Tuple[str, Any], ...] = ()


@dataclass(frozen=True)
class PredicateResult:
    value: bool
    clauses: Tuple[ClauseResult, ...]

    def failing(self) -> List[str]:
        return [c.label for c in self.clauses if not c.value]


@dataclass(frozen=True)
class Predicate:
    """A conjunction of labelled clauses over one (arity 1) or two (arity 2) states."""

    arity: int
    clauses: Tuple[Clause, ...]

    @classmethod
    def of(cls, arity: int, *clauses: Union[Expr, Tuple[str, Expr]]) -> "Predicate":
        out = []
        for c in clauses:
            if isinstance(c, tuple):
                out.append(Clause(c[0], c[1]))
            else:
                out.append(Clause(c.render(), c))
        return cls(arity, tuple(out))

    @classmethod
    def true(cls, arity: int) -> "Predicate":
        return cls(arity, (Clause("true", Const(True)),))

    def uses_me(self) -> bool:
        return any(isinstance(n, Me) for c in self.clauses for n in c.expr.walk())

    def components(self) -> List[str]:
        return sorted({n.name for c in self.clauses for n in c.expr.walk() if isinstance(n, Comp)})

    def render(self) -> str:
        return " ∧ ".join(c.label for c in self.clauses)

    def bind(self, layout: Layout, where: str, params: Optional[Dict[str, Ty]] = None) -> "BoundPredicate":
        cx = Cx(layout, self.arity, dict(params or {}), where)
        return BoundPredicate(self, cx, [_bool(c.expr, cx) for c in self.clauses])


class BoundPredicate:
    def __init__(self, predicate: Predicate, cx: Cx, fns: List[Callable[[Env], Any]]):
        self.predicate = predicate
        self.cx = cx
        self.fns = fns

    def holds(self, states: Sequence[tuple], me: Optional[str] = None, params: Optional[Dict[str, Any]] = None) -> bool:
        env = Env(states, me, params)
        for f in self.fns:
            if not f(env):
                return False
        return True

    def evaluate(self, states: Sequence[tuple], me: Optional[str] = None,
                 params: Optional[Dict[str, Any]] = None) -> PredicateResult:
        """Overall truth plus per-clause truth; failing clauses carry sub-expression values."""
        if len(states) != self.predicate.arity:
            raise SchemaMismatch(
                f"{self.cx.where} takes {self.predicate.arity} state(s), got {len(states)}"
            )
        env = Env(states, me, params)
        results = []
        for clause, f in zip(self.predicate.clauses, self.fns):
            value = bool(f(env))
            detail = () if value else tuple(self._explain(clause.expr, env))
            results.append(ClauseResult(clause.label, value, detail))
        return PredicateResult(all(r.value for r in results), tuple(results))

    def _explain(self, e: Expr, env: Env) -> List[Tuple[str, Any]]:
        if isinstance(e, Quant):
            found = e.witness(self.cx, env)
            return [(e.var, found)] if found is not None else []
        return [(child.render(), self._value(child, env)) for child in e.children()]

    def _value(self, e: Expr, env: Env) -> Any:
        try:
            f, _ = e.compile(self.cx)
            return f(Env(env.states, env.me, env.vars))
        except (UnknownIdentifier, SchemaMismatch, UndefinedValue):
            return None


# ── Builders ──────────────────────────────────────────────────────────────────

def comp(name: str, which: int = 0) -> Comp:
    return Comp(name, which)


def remote(name: str) -> Comp:
    return Comp(name, 1)


def var(name: str) -> Var:
    return Var(name)


def const(value) -> Const:
    return Const(value)


def level(name: str) -> Level:
    return Level(name)


BOTTOM = Bottom()
ME = Me()
TRUE = Const(True)
FALSE = Const(False)


def ident(domain: str, value: str) -> Id:
    return Id(domain, value)


def get(base: Expr, key: Union[Expr, str]) -> Get:
    return Get(base, Var(key) if isinstance(key, str) else key)


def attr(base: Expr, name: str) -> Attr:
    return Attr(base, name)


def not_(a: Expr) -> Not:
    return Not(a)


def and_(*items: Expr) -> And:
    return And(tuple(items))


def or_(*items: Expr) -> Or:
    return Or(tuple(items))


def implies(a: Expr, b: Expr) -> Implies:
    return Implies(a, b)


def eq(a, b):
    return Cmp("==", _lift(a), _lift(b))


def ne(a, b):
    return Cmp("!=", _lift(a), _lift(b))


def lt(a, b):
    return Cmp("<", _lift(a), _lift(b))


def le(a, b):
    return Cmp("<=", _lift(a), _lift(b))


def gt(a, b):
    return Cmp(">", _lift(a), _lift(b))


def ge(a, b):
    return Cmp(">=", _lift(a), _lift(b))


def add(a, b):
    return Arith("+", _lift(a), _lift(b))


def sub(a, b):
    return Arith("-", _lift(a), _lift(b))


def max_(a, b):
    return Arith("max", _lift(a), _lift(b))


def min_(a, b):
    return Arith("min", _lift(a), _lift(b))


def forall(v: str, domain: str, body: Expr) -> Quant:
    return Quant("forall", v, domain, body)


def exists(v: str, domain: str, body: Expr) -> Quant:
    return Quant("exists", v, domain, body)


def home(a: Union[Expr, str]) -> Home:
    return Home(Var(a) if isinstance(a, str) else a)


def _lift(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (bool, int)):
        return Const(x)
    if x is None:
        return BOTTOM
    raise TypeError(f"cannot lift {x!r} into an expression")
