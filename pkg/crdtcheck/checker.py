"""
Staged verification pipeline over bounded, exhaustively enumerated domains.

Stages run in a fixed order (WellFormedness, Compliance, Convergence,
SequentialSafety, ConcurrentSafety). Findings are verdicts, never
exceptions: every violated obligation becomes a Counterexample that records
its witness states, the assumptions it was found under, how derived states
were produced, and the clause breakdown of the failed assertion. Reports only
ever claim results within the stated bounds.

Counterexamples are grouped by (assertion, operation, orientation); each
group keeps the first few in canonical enumeration order and a total count.
"""
import bisect
import itertools
import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .domain import DomainBounds, Layout
from .errors import CheckerError, DomainTooLarge, SchemaMismatch, UnboundedComponent, UnknownIdentifier
from .lattice import BoundSpec, ObjectSpec, OperationSpec, OpInstance, StateValue
from .schemas import (
    STAGE_ORDER,
    CheckConfig,
    CheckReport,
    CheckStage,
    CheckStatistics,
    ClauseReport,
    Counterexample,
    Derivation,
    Fact,
    StageResult,
    Verdict,
    ViolationSummary,
)

logger = logging.getLogger(__name__)

GroupKey = Tuple[str, Optional[str], Optional[str]]


class Findings:
    """Counterexamples grouped per (assertion, operation, orientation), capped per group."""

    def __init__(self, cap: int):
        self.cap = cap
        self.order: List[GroupKey] = []
        self.kept: Dict[GroupKey, List[Counterexample]] = {}
        self.totals: Dict[GroupKey, int] = {}
        # obligations examined, summed across fragments
        self.checked = 0

    def add(self, key: GroupKey, build: Callable[[], Counterexample]) -> None:
        if key not in self.totals:
            self.order.append(key)
            self.kept[key] = []
            self.totals[key] = 0
        self.totals[key] += 1
        if len(self.kept[key]) < self.cap:
            self.kept[key].append(build())

    def extend(self, other: "Findings") -> None:
        self.checked += other.checked
        for key in other.order:
            if key not in self.totals:
                self.order.append(key)
                self.kept[key] = []
                self.totals[key] = 0
            self.totals[key] += other.totals[key]
            room = self.cap - len(self.kept[key])
            self.kept[key].extend(other.kept[key][:max(room, 0)])

    def __bool__(self):
        return bool(self.order)

    def counterexamples(self) -> List[Counterexample]:
        return [c for key in self.order for c in self.kept[key]]

    def summaries(self) -> List[ViolationSummary]:
        return [
            ViolationSummary(
                assertion_id=key[0], operation=key[1], orientation=key[2],
                total=self.totals[key], shown=len(self.kept[key]),
            )
            for key in self.order
        ]


@dataclass(frozen=True)
class ValidPair:
    a: int
    b: int
    # (holder of a, holder of b) assignments under which the pair may be merged
    placements: Tuple[Tuple[Optional[str], Optional[str]], ...]


@dataclass(frozen=True)
class ReplayResult:
    assertion_holds: bool
    assumptions_hold: bool
    derivations_match: bool

    @property
    def reproduces(self) -> bool:
        return (not self.assertion_holds) and self.assumptions_hold and self.derivations_match


def _fact_inv(role: str) -> Fact:
    return Fact(kind="inv", roles=[role])


def _fact_pm(local: str, remote: str, me: Optional[str]) -> Fact:
    return Fact(kind="pre_merge", roles=[local, remote], me=me)


def _fact_pre(role: str, inst: OpInstance, me: Optional[str]) -> Fact:
    return Fact(kind="pre_op", roles=[role], me=me, operation=inst.name, params=inst.param_dict())


def _fact_leq(lower: str, higher: str) -> Fact:
    return Fact(kind="leq", roles=[lower, higher])


def _derive_op(role: str, source: str, inst: OpInstance, me: Optional[str]) -> Derivation:
    return Derivation(role=role, by="op", inputs=[source], operation=inst.name, params=inst.param_dict(), me=me)


def _derive_merge(role: str, local: str, remote: str, me: Optional[str]) -> Derivation:
    return Derivation(role=role, by="merge", inputs=[local, remote], me=me)


class Checker:
    """Shared enumeration context for the stages of one (spec, bounds, config) run.

    Expensive views (raw states, the valid region, valid pairs, cached
    predicate tables) are computed on first use and reused across stages.
    """

    def __init__(self, spec: ObjectSpec, bounds: DomainBounds, config: Optional[CheckConfig] = None):
        self.spec = spec
        self.bounds = bounds
        self.config = config or CheckConfig()
        self.stats = CheckStatistics(seed=self.config.seed)
        self.bind_error: Optional[CheckerError] = None
        self.bound: Optional[BoundSpec] = None
        try:
            self.bound = spec.bind(bounds)
        except CheckerError as e:
            self.bind_error = e
        self._states: Optional[List[StateValue]] = None
        self._valid: Optional[List[int]] = None
        self._pairs: Optional[List[ValidPair]] = None
        self._pm_cache: Dict[Tuple[StateValue, StateValue, Optional[str]], bool] = {}
        self._leq_cache: Dict[Tuple[StateValue, StateValue], bool] = {}

    # ── context ──

    @property
    def layout(self) -> Layout:
        return self.bound.layout

    @property
    def replicas(self) -> Tuple[str, ...]:
        return self.bound.replicas

    def has(self, *parts: str) -> bool:
        if self.bound is None:
            return False
        for part in parts:
            if part == "merge":
                if self.spec.merge is None:
                    return False
            elif part == "operations":
                if any(not self.bound.has(f"{op.name}.pre") for op in self.spec.operations):
                    return False
            elif part == "initial_state":
                if self.spec.initial_state is None:
                    return False
            elif not self.bound.has(part):
                return False
        return True

    @property
    def pm_uses_me(self) -> bool:
        return self.spec.pre_merge is not None and self.spec.pre_merge.uses_me()

    def placements(self) -> List[Tuple[Optional[str], Optional[str]]]:
        """Replica assignments (holder of local, holder of remote) for a mergeable pair."""
        if not self.pm_uses_me:
            return [(None, None)]
        if len(self.replicas) == 1:
            return [(self.replicas[0], self.replicas[0])]
        return [(i, j) for i in self.replicas for j in self.replicas if i != j]

    def op_mes(self, op: OperationSpec) -> List[Optional[str]]:
        return list(self.replicas) if op.me_sensitive else [None]

    def merge_mes(self) -> List[Optional[str]]:
        return list(self.replicas)

    def states(self) -> List[StateValue]:
        if self._states is None:
            self._states = self.layout.enumerate()
            self.stats.states_enumerated = len(self._states)
            logger.info(f"{self.spec.name}: enumerated {len(self._states)} states")
        return self._states

    def valid(self) -> List[int]:
        """Indices (into states()) of states satisfying the invariant."""
        if self._valid is None:
            inv = self.bound.compiled("invariant")
            self._valid = [k for k, s in enumerate(self.states()) if inv.holds((s,))]
            self.stats.valid_states = len(self._valid)
            logger.info(f"{self.spec.name}: {len(self._valid)} states satisfy the invariant")
        return self._valid

    def pm(self, local: StateValue, remote: StateValue, me: Optional[str]) -> bool:
        key = (local, remote, me)
        hit = self._pm_cache.get(key)
        if hit is None:
            hit = self.bound.compiled("pre_merge").holds((local, remote), me)
            self._pm_cache[key] = hit
        return hit

    def leq(self, lower: StateValue, higher: StateValue) -> bool:
        key = (lower, higher)
        hit = self._leq_cache.get(key)
        if hit is None:
            hit = self.bound.compiled("leq").holds((lower, higher))
            self._leq_cache[key] = hit
        return hit

    def inv(self, s: StateValue) -> bool:
        return self.bound.compiled("invariant").holds((s,))

    def enabled(self, inst: OpInstance, s: StateValue, me: Optional[str]) -> bool:
        return self.bound.compiled(f"{inst.name}.pre").holds((s,), me, inst.param_dict())

    def apply(self, inst: OpInstance, s: StateValue, me: Optional[str]) -> StateValue:
        return inst.op.effect(self.layout, s, inst.param_dict(), me)

    def merge(self, local: StateValue, remote: StateValue, me: Optional[str]) -> StateValue:
        return self.spec.merge(self.layout, local, remote, me)

    def pairs(self) -> List[ValidPair]:
        """Ordered pairs of valid states with the placements under which they are mergeable."""
        if self._pairs is None:
            both = self.config.check_both_pre_merge_orientations
            states, out = self.states(), []
            for a in self.valid():
                for b in self.valid():
                    sa, sb = states[a], states[b]
                    ok = tuple(
                        (i, j) for i, j in self.placements()
                        if self.pm(sa, sb, i) and (not both or self.pm(sb, sa, j))
                    )
                    if ok:
                        out.append(ValidPair(a, b, ok))
            self._pairs = out
            self.stats.valid_pairs = len(out)
            logger.info(f"{self.spec.name}: {len(out)} valid pairs")
        return self._pairs

    def instances(self) -> List[OpInstance]:
        out = list(self.bound.all_instances())
        self.stats.op_instances = len(out)
        return out

    def chunked(self, items: Sequence[Any], work: Callable[[Sequence[Any]], Findings]) -> Findings:
        """Run `work` over contiguous chunks, merging fragments in canonical order."""
        jobs = self.config.jobs
        if jobs <= 1 or len(items) < 2:
            return work(items)
        size = -(-len(items) // jobs)
        chunks = [items[k:k + size] for k in range(0, len(items), size)]
        logger.debug(f"Splitting {len(items)} items into {len(chunks)} chunks")
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            fragments = list(pool.map(work, chunks))
        merged = Findings(self.config.max_counterexamples_per_assertion)
        for fragment in fragments:
            merged.extend(fragment)
        return merged

    def findings(self) -> Findings:
        return Findings(self.config.max_counterexamples_per_assertion)

    def sample_positions(self, sizes: Sequence[int], label: str) -> Optional[List[Tuple[int, int]]]:
        """Seeded (group, offset) sample of a grouped candidate space larger than the cap.

        Returns None when the space fits, so callers enumerate everything. Picks
        come back in canonical order.
        """
        total, cap = sum(sizes), self.bounds.enumeration_cap
        if total <= cap:
            return None
        starts = [0, *itertools.accumulate(sizes)]
        picks = []
        for x in sorted(random.Random(self.config.seed).sample(range(total), cap)):
            g = bisect.bisect_right(starts, x) - 1
            picks.append((g, x - starts[g]))
        self.stats.sampled.append(label)
        logger.warning(f"{self.spec.name}: {label} has {total} candidates, sampling {cap} (seed {self.config.seed})")
        return picks

    # ── counterexamples ──

    def eval_fact(self, fact: Fact, states: Dict[str, StateValue]) -> bool:
        roles = [states[r] for r in fact.roles]
        if fact.kind == "inv":
            return self.inv(roles[0])
        if fact.kind == "pre_merge":
            return self.bound.compiled("pre_merge").holds((roles[0], roles[1]), fact.me)
        if fact.kind == "pre_op":
            return self.bound.compiled(f"{fact.operation}.pre").holds((roles[0],), fact.me, fact.params)
        if fact.kind == "leq":
            return self.bound.compiled("leq").holds((roles[0], roles[1]))
        if fact.kind == "equal":
            return roles[0] == roles[1]
        if fact.kind == "conforms":
            return self.layout.conforms(roles[0])
        if fact.kind == "present":
            return getattr(self.spec, fact.label, None) not in (None, ())
        if fact.kind == "compiles":
            return self.bound is not None and all(part != fact.label for part, _ in self.bound.problems)
        raise SchemaMismatch(f"unknown fact kind '{fact.kind}'")

    def clauses(self, fact: Fact, states: Dict[str, StateValue]) -> List[ClauseReport]:
        part = {"inv": "invariant", "pre_merge": "pre_merge", "leq": "leq"}.get(fact.kind)
        if fact.kind == "pre_op":
            part = f"{fact.operation}.pre"
        if part is None:
            return []
        try:
            result = self.bound.compiled(part).evaluate(
                tuple(states[r] for r in fact.roles), fact.me, fact.params
            )
        except CheckerError:
            return []
        return [ClauseReport(label=c.label, value=c.value, detail=dict(c.detail)) for c in result.clauses]

    def counterexample(
        self,
        stage: CheckStage,
        assertion_id: str,
        witnesses: Dict[str, StateValue],
        assertion: Fact,
        assumptions: Iterable[Fact] = (),
        derivations: Iterable[Derivation] = (),
        inst: Optional[OpInstance] = None,
        me: Optional[str] = None,
        orientation: Optional[str] = None,
        note: str = "",
    ) -> Counterexample:
        return Counterexample(
            stage=stage,
            assertion_id=assertion_id,
            operation=inst.name if inst else None,
            params=inst.param_dict() if inst else {},
            me=me,
            orientation=orientation,
            witnesses={role: self._tree(s) for role, s in witnesses.items()},
            assumptions=list(assumptions),
            derivations=list(derivations),
            assertion=assertion,
            clauses=self.clauses(assertion, witnesses),
            note=note,
        )

    def _tree(self, s: StateValue) -> Any:
        try:
            return self.layout.to_tree(s)
        except (TypeError, KeyError, IndexError):
            return repr(s)

    # ── stage 1: well-formedness ──

    def check_well_formedness(self) -> StageResult:
        stage = CheckStage.WELL_FORMEDNESS
        found, warnings = self.findings(), []
        if self.bind_error is not None:
            e = self.bind_error
            found.add((_wellformed_id(e), None, None), lambda: Counterexample(
                stage=stage, assertion_id=_wellformed_id(e),
                assertion=Fact(kind="compiles", label="schema"), note=e.message,
            ))
            return _result(stage, found, warnings, detail=e.message)

        total = self.layout.cardinality()
        if total > self.bounds.enumeration_cap:
            e = DomainTooLarge(total, self.bounds.enumeration_cap)
            logger.warning(f"{self.spec.name}: {e.message}")
            return StageResult(stage=stage, verdict=Verdict.ABORTED, detail=e.message)

        for part, e in self.bound.problems:
            found.add((_wellformed_id(e), None, None), lambda part=part, e=e: Counterexample(
                stage=stage, assertion_id=_wellformed_id(e),
                assertion=Fact(kind="compiles", label=part), note=e.message,
            ))

        if self.spec.initial_state is not None:
            try:
                init = self.bound.initial()
                ok = self.layout.conforms(init)
                note = "" if ok else f"initial state {init!r} does not conform to the schema"
            except CheckerError as e:
                ok, note = False, e.message
            if not ok:
                found.add(("wellformed.initial_state", None, None), lambda: Counterexample(
                    stage=stage, assertion_id="wellformed.initial_state",
                    assertion=Fact(kind="conforms", roles=["initial"]), note=note,
                ))

        for op in self.spec.operations:
            for p in op.params:
                declared = p.domain in self.layout.ids if p.kind == "id" else p.domain in self.bounds.ranges
                if not declared:
                    found.add(("wellformed.param_domain", op.name, None), lambda op=op, p=p: Counterexample(
                        stage=stage, assertion_id="wellformed.param_domain", operation=op.name,
                        assertion=Fact(kind="compiles", label=f"{op.name}.{p.name}"),
                        note=f"parameter '{p.name}' of {op.name} uses undeclared domain '{p.domain}'",
                    ))
        if found:
            return _result(stage, found, warnings)

        states = self.states()
        instances = self.instances()
        live: Set[str] = set()
        for inst in instances:
            for me in self.op_mes(inst.op):
                for s in states:
                    if not self.enabled(inst, s, me):
                        continue
                    live.add(inst.name)
                    result = self.apply(inst, s, me)
                    if not self.layout.conforms(result):
                        found.add(("op.result_conforms", inst.name, None),
                                  lambda inst=inst, s=s, me=me: self.counterexample(
                                      stage, "op.result_conforms", {"local": s},
                                      Fact(kind="conforms", roles=["result"]),
                                      assumptions=[_fact_pre("local", inst, me)],
                                      derivations=[_derive_op("result", "local", inst, me)],
                                      inst=inst, me=me,
                                      note=f"{inst.render()} produced {result!r}",
                                  ))
        for op in self.spec.operations:
            if op.name not in live:
                warnings.append(f"dead operation: {op.name} is never enabled within bounds")
                logger.warning(f"{self.spec.name}: {op.name} is never enabled within bounds")

        if self.has("invariant", "merge"):
            valid = [states[k] for k in self.valid()]
            for a, b in itertools.product(valid, valid):
                for me in self.merge_mes():
                    m = self.merge(a, b, me)
                    if not self.layout.conforms(m):
                        found.add(("merge.result_conforms", None, None),
                                  lambda a=a, b=b, me=me, m=m: self.counterexample(
                                      stage, "merge.result_conforms", {"local": a, "remote": b},
                                      Fact(kind="conforms", roles=["result"]),
                                      assumptions=[_fact_inv("local"), _fact_inv("remote")],
                                      derivations=[_derive_merge("result", "local", "remote", me)],
                                      me=me, note=f"merge produced {m!r}",
                                  ))
        return _result(stage, found, warnings)

    # ── stage 2: compliance ──

    REQUIRED_PARTS = ("initial_state", "leq", "operations", "merge", "pre_merge", "invariant")

    def check_compliance(self) -> StageResult:
        stage = CheckStage.COMPLIANCE
        found = self.findings()
        for part in self.REQUIRED_PARTS:
            if getattr(self.spec, part) in (None, ()):
                aid = f"compliance.missing_{part}"
                found.add((aid, None, None), lambda part=part, aid=aid: Counterexample(
                    stage=stage, assertion_id=aid,
                    assertion=Fact(kind="present", label=part),
                    note=f"spec '{self.spec.name}' does not provide {part}",
                ))
        return _result(stage, found, [])

    # ── stage 3: convergence ──

    def check_convergence(self) -> StageResult:
        stage = CheckStage.CONVERGENCE
        found, warnings = self.findings(), []
        states = self.states()
        valid = self.valid()
        ups: Dict[int, List[int]] = {a: [b for b in valid if self.leq(states[a], states[b])] for a in valid}

        for a in valid:
            if not self.leq(states[a], states[a]):
                found.add(("order.reflexivity", None, None), lambda a=a: self.counterexample(
                    stage, "order.reflexivity", {"s1": states[a]}, _fact_leq("s1", "s1"),
                    assumptions=[_fact_inv("s1")],
                ))

        links = [(a, b) for a in valid for b in ups[a]]
        picks = self.sample_positions([len(ups[b]) for _, b in links], "order.transitivity")
        if picks is None:
            chains = ((a, b, c) for a, b in links for c in ups[b])
        else:
            chains = ((links[g][0], links[g][1], ups[links[g][1]][off]) for g, off in picks)
        for a, b, c in chains:
            if not self.leq(states[a], states[c]):
                found.add(("order.transitivity", None, None), lambda a=a, b=b, c=c: self.counterexample(
                    stage, "order.transitivity", {"s1": states[a], "s2": states[b], "s3": states[c]},
                    _fact_leq("s1", "s3"),
                    assumptions=[_fact_inv("s1"), _fact_inv("s2"), _fact_inv("s3"),
                                 _fact_leq("s1", "s2"), _fact_leq("s2", "s3")],
                ))

        pairs = self.pairs()
        for p in pairs:
            sa, sb = states[p.a], states[p.b]
            if p.a != p.b and self.leq(sa, sb) and self.leq(sb, sa):
                found.add(("order.antisymmetry", None, None), lambda p=p, sa=sa, sb=sb: self.counterexample(
                    stage, "order.antisymmetry", {"local": sa, "remote": sb},
                    Fact(kind="equal", roles=["local", "remote"]),
                    assumptions=self._pair_facts(p.placements[0]) + [_fact_leq("local", "remote"),
                                                                     _fact_leq("remote", "local")],
                ))

        for inst in self.instances():
            for a in valid:
                s = states[a]
                for me in self.op_mes(inst.op):
                    if not self.enabled(inst, s, me):
                        continue
                    result = self.apply(inst, s, me)
                    if not self.leq(s, result):
                        found.add(("inflation", inst.name, None), lambda s=s, inst=inst, me=me, result=result:
                                  self.counterexample(
                                      stage, "inflation", {"local": s, "result": result},
                                      _fact_leq("local", "result"),
                                      assumptions=[_fact_inv("local"), _fact_pre("local", inst, me)],
                                      derivations=[_derive_op("result", "local", inst, me)],
                                      inst=inst, me=me,
                                  ))

        candidates = self._leastness_candidates()
        commutes: List[str] = []
        cand_ups: Dict[int, Set[int]] = {
            a: {k for k, c in enumerate(candidates) if self.leq(states[a], c)} for a in valid
        }
        for p in pairs:
            sa, sb = states[p.a], states[p.b]
            for i, j in p.placements:
                m = self.merge(sa, sb, i)
                assumptions = self._pair_facts((i, j))
                derived = [_derive_merge("result", "local", "remote", i)]
                for role, src in (("local", sa), ("remote", sb)):
                    if not self.leq(src, m):
                        found.add(("merge.upper_bound", None, role), lambda role=role, sa=sa, sb=sb, m=m, i=i,
                                  assumptions=assumptions, derived=derived: self.counterexample(
                                      stage, "merge.upper_bound", {"local": sa, "remote": sb, "result": m},
                                      _fact_leq(role, "result"), assumptions=assumptions,
                                      derivations=derived, me=i, orientation=role,
                                  ))
                for k in sorted(cand_ups[p.a] & cand_ups[p.b]):
                    bound = candidates[k]
                    if not self.leq(m, bound):
                        found.add(("merge.least", None, None), lambda sa=sa, sb=sb, m=m, bound=bound, i=i,
                                  assumptions=assumptions, derived=derived: self.counterexample(
                                      stage, "merge.least",
                                      {"local": sa, "remote": sb, "result": m, "bound": bound},
                                      _fact_leq("result", "bound"),
                                      assumptions=assumptions + [_fact_leq("local", "bound"),
                                                                 _fact_leq("remote", "bound")],
                                      derivations=derived, me=i,
                                  ))
                if m != self.merge(sb, sa, i):
                    commutes.append(
                        f"merge.commutativity: merge({_short(sa)}, {_short(sb)}) ≠ merge({_short(sb)}, {_short(sa)}) at {i}"
                    )

        warnings.extend(commutes[:self.config.max_counterexamples_per_assertion])
        warnings.extend(self._associativity(pairs))
        warnings.extend(self._raw_order_laws())
        for w in warnings:
            logger.warning(f"{self.spec.name}: {w}")
        return _result(stage, found, _dedupe(warnings), checked={
            "valid_states": len(valid), "valid_pairs": len(pairs), "leastness_candidates": len(candidates),
        })

    def _pair_facts(self, placement: Tuple[Optional[str], Optional[str]]) -> List[Fact]:
        i, j = placement
        facts = [_fact_inv("local"), _fact_inv("remote"), _fact_pm("local", "remote", i)]
        if self.config.check_both_pre_merge_orientations:
            facts.append(_fact_pm("remote", "local", j))
        return facts

    def _leastness_candidates(self) -> List[StateValue]:
        states = self.states()
        mode = self.config.leastness_mode
        if mode == "auto":
            mode = "exhaustive" if len(states) ** 3 <= self.bounds.enumeration_cap else "sampled"
        self.stats.leastness_mode = mode
        if mode == "exhaustive":
            candidates = list(states)
        else:
            rng = random.Random(self.config.seed)
            picked = set(self.valid())
            others = [k for k in range(len(states)) if k not in picked]
            extra = rng.sample(others, min(self.config.leastness_samples, len(others)))
            candidates = [states[k] for k in sorted(picked | set(extra))]
            self.stats.sampled.append("merge.least")
            logger.warning(
                f"{self.spec.name}: leastness sampled over {len(candidates)} candidate bounds (seed {self.config.seed})"
            )
        self.stats.leastness_candidates = len(candidates)
        return candidates

    def _associativity(self, pairs: List[ValidPair]) -> List[str]:
        states = self.states()
        by_first: Dict[int, List[int]] = {}
        for p in pairs:
            by_first.setdefault(p.a, []).append(p.b)
        triples = [(a, b, c) for a, bs in by_first.items() for b in bs for c in by_first.get(b, ())]
        limit = self.config.leastness_samples * 4
        if len(triples) > limit:
            triples = random.Random(self.config.seed).sample(triples, limit)
            triples.sort()
            self.stats.sampled.append("merge.associativity")
        me = self.replicas[0]
        out = []
        for a, b, c in triples:
            sa, sb, sc = states[a], states[b], states[c]
            left = self.merge(self.merge(sa, sb, me), sc, me)
            right = self.merge(sa, self.merge(sb, sc, me), me)
            if left != right:
                out.append(f"merge.associativity: fails for ({_short(sa)}, {_short(sb)}, {_short(sc)})")
        return out[:self.config.max_counterexamples_per_assertion]

    def _raw_order_laws(self) -> List[str]:
        """Reflexivity and antisymmetry over the raw product domain, reported as warnings only."""
        states = self.states()
        out = [f"order.reflexivity (raw domain): fails at {_short(s)}" for s in states if not self.leq(s, s)]
        pool = states
        if len(states) ** 2 > self.config.raw_pair_limit:
            rng = random.Random(self.config.seed)
            pool = [states[k] for k in sorted(rng.sample(range(len(states)), min(self.config.leastness_samples, len(states))))]
            self.stats.sampled.append("order.antisymmetry (raw domain)")
        violations = 0
        example = None
        for a, b in itertools.combinations(pool, 2):
            if self.leq(a, b) and self.leq(b, a):
                violations += 1
                example = example or (a, b)
        if violations:
            out.append(
                f"order.antisymmetry (raw domain): {violations} mutually ≤ distinct pairs, "
                f"e.g. {_short(example[0])} / {_short(example[1])}; the law holds only within the valid region"
            )
        return out

    # ── stage 4: sequential safety ──

    def check_sequential_safety(self) -> StageResult:
        stage = CheckStage.SEQUENTIAL_SAFETY
        found = self.findings()
        states = self.states()

        init = self.bound.initial()
        if not self.inv(init):
            found.add(("initial.inv", None, None), lambda: self.counterexample(
                stage, "initial.inv", {"initial": init}, _fact_inv("initial"),
                derivations=[Derivation(role="initial", by="initial")],
            ))
        for i, _ in self.placements():
            if not self.pm(init, init, i):
                found.add(("initial.inv", None, "pre_merge"), lambda i=i: self.counterexample(
                    stage, "initial.inv", {"initial": init}, _fact_pm("initial", "initial", i),
                    derivations=[Derivation(role="initial", by="initial")], me=i, orientation="pre_merge",
                ))

        for inst in self.instances():
            for a in self.valid():
                s = states[a]
                for me in self.op_mes(inst.op):
                    if not self.enabled(inst, s, me):
                        continue
                    result = self.apply(inst, s, me)
                    if not self.inv(result):
                        found.add(("op.preserves_inv", inst.name, None),
                                  lambda s=s, inst=inst, me=me, result=result: self.counterexample(
                                      stage, "op.preserves_inv", {"local": s, "result": result},
                                      _fact_inv("result"),
                                      assumptions=[_fact_inv("local"), _fact_pre("local", inst, me)],
                                      derivations=[_derive_op("result", "local", inst, me)],
                                      inst=inst, me=me,
                                  ))

        valid = self.valid()

        def merges(chunk: Sequence[int]) -> Findings:
            out = self.findings()
            for a in chunk:
                for b in valid:
                    sa, sb = states[a], states[b]
                    for me in self.merge_mes():
                        if not self.pm(sa, sb, me):
                            continue
                        m = self.merge(sa, sb, me)
                        if not self.inv(m):
                            out.add(("merge.preserves_inv", None, None),
                                    lambda sa=sa, sb=sb, me=me, m=m: self.counterexample(
                                        stage, "merge.preserves_inv", {"local": sa, "remote": sb, "result": m},
                                        _fact_inv("result"),
                                        assumptions=[_fact_inv("local"), _fact_inv("remote"),
                                                     _fact_pm("local", "remote", me)],
                                        derivations=[_derive_merge("result", "local", "remote", me)],
                                        me=me,
                                    ))
            return out

        found.extend(self.chunked(valid, merges))
        return _result(stage, found, [])

    # ── stage 5: concurrent safety ──

    def check_concurrent_safety(self) -> StageResult:
        stage = CheckStage.CONCURRENT_SAFETY
        found = self.findings()
        states = self.states()
        both = self.config.check_both_pre_merge_orientations
        instances = self.instances()
        pairs = self.pairs()

        def ops(chunk: Sequence[ValidPair]) -> Findings:
            out = self.findings()
            for p in chunk:
                sa, sb = states[p.a], states[p.b]
                for i, j in p.placements:
                    for inst in instances:
                        mes = [i] if self.pm_uses_me else self.op_mes(inst.op)
                        for me in mes:
                            if not self.enabled(inst, sa, me):
                                continue
                            n = self.apply(inst, sa, me)
                            checks = [("local", _fact_pm("result", "remote", i), self.pm(n, sb, i))]
                            if both:
                                checks.append(("remote", _fact_pm("remote", "result", j), self.pm(sb, n, j)))
                            for orientation, fact, ok in checks:
                                if ok:
                                    continue
                                out.add(("op.preserves_pre_merge", inst.name, orientation),
                                        lambda sa=sa, sb=sb, n=n, inst=inst, me=me, i=i, j=j, fact=fact,
                                        orientation=orientation: self.counterexample(
                                            stage, "op.preserves_pre_merge",
                                            {"local": sa, "remote": sb, "result": n}, fact,
                                            assumptions=self._pair_facts((i, j)) + [_fact_pre("local", inst, me)],
                                            derivations=[_derive_op("result", "local", inst, me)],
                                            inst=inst, me=me, orientation=orientation,
                                        ))
            return out

        found.extend(self.chunked(pairs, ops))

        if self.config.merge_pre_merge_mode == "two_state":
            found.extend(self.chunked(pairs, self._two_state_merges))
        else:
            merged = self.chunked(self._triple_plan(pairs), self._three_state_merges)
            self.stats.triples_checked = merged.checked
            found.extend(merged)
        return _result(stage, found, [], checked={"valid_pairs": len(pairs),
                                                  "triples_checked": self.stats.triples_checked})

    def _two_state_merges(self, chunk: Sequence[ValidPair]) -> Findings:
        stage = CheckStage.CONCURRENT_SAFETY
        states = self.states()
        both = self.config.check_both_pre_merge_orientations
        out = self.findings()
        for p in chunk:
            sa, sb = states[p.a], states[p.b]
            for i, j in p.placements:
                m = self.merge(sa, sb, i)
                checks = [("local", _fact_pm("result", "remote", i), self.pm(m, sb, i))]
                if both:
                    checks.append(("remote", _fact_pm("remote", "result", j), self.pm(sb, m, j)))
                for orientation, fact, ok in checks:
                    if not ok:
                        out.add(("merge.preserves_pre_merge", None, orientation),
                                lambda sa=sa, sb=sb, m=m, i=i, j=j, fact=fact, orientation=orientation:
                                self.counterexample(
                                    stage, "merge.preserves_pre_merge", {"local": sa, "remote": sb, "result": m},
                                    fact, assumptions=self._pair_facts((i, j)),
                                    derivations=[_derive_merge("result", "local", "remote", i)],
                                    me=i, orientation=orientation,
                                ))
        return out

    def _triple_plan(self, pairs: List[ValidPair]) -> List[Tuple[ValidPair, Optional[List[int]]]]:
        """Pairs to extend with a third state, each with the sampled positions to visit (None: all)."""
        valid = self.valid()
        sizes = [len(p.placements) * len(valid) * len(self._third_holders(p.placements[0][0])) for p in pairs]
        picks = self.sample_positions(sizes, "merge.preserves_pre_merge")
        if picks is None:
            return [(p, None) for p in pairs]
        return [(pairs[g], [off for _, off in group])
                for g, group in itertools.groupby(picks, key=lambda pick: pick[0])]

    def _third_candidates(self, p: ValidPair, positions: Optional[List[int]]):
        valid = self.valid()
        holders = {i: self._third_holders(i) for i, _ in p.placements}
        if positions is None:
            for i, j in p.placements:
                for c in valid:
                    for k in holders[i]:
                        yield i, j, c, k
            return
        width = len(holders[p.placements[0][0]])
        block = len(valid) * width
        for off in positions:
            i, j = p.placements[off // block]
            rest = off % block
            yield i, j, valid[rest // width], holders[i][rest % width]

    def _three_state_merges(self, chunk: Sequence[Tuple[ValidPair, Optional[List[int]]]]) -> Findings:
        stage = CheckStage.CONCURRENT_SAFETY
        states = self.states()
        both = self.config.check_both_pre_merge_orientations
        out = self.findings()
        triples = 0
        for p, positions in chunk:
            sa, sb = states[p.a], states[p.b]
            merges: Dict[Optional[str], StateValue] = {}
            for i, j, c, k in self._third_candidates(p, positions):
                sc = states[c]
                if not self._triple_assumed(sa, sb, sc, i, j, k):
                    continue
                triples += 1
                if i not in merges:
                    merges[i] = self.merge(sa, sb, i)
                m = merges[i]
                checks = [("local", _fact_pm("result", "third", i), self.pm(m, sc, i))]
                if both:
                    checks.append(("remote", _fact_pm("third", "result", k), self.pm(sc, m, k)))
                for orientation, fact, ok in checks:
                    if ok:
                        continue
                    out.add(("merge.preserves_pre_merge", None, orientation),
                            lambda sa=sa, sb=sb, sc=sc, m=m, i=i, j=j, k=k, fact=fact,
                            orientation=orientation: self.counterexample(
                                stage, "merge.preserves_pre_merge",
                                {"local": sa, "remote": sb, "third": sc, "result": m}, fact,
                                assumptions=self._triple_facts(i, j, k),
                                derivations=[_derive_merge("result", "local", "remote", i)],
                                me=i, orientation=orientation,
                            ))
        out.checked = triples
        return out

    def _third_holders(self, i: Optional[str]) -> List[Optional[str]]:
        if not self.pm_uses_me:
            return [None]
        if len(self.replicas) == 1:
            return [i]
        return [k for k in self.replicas if k != i]

    def _triple_assumed(self, sa, sb, sc, i, j, k) -> bool:
        if not (self.pm(sa, sc, i) and self.pm(sb, sc, j)):
            return False
        if not self.config.check_both_pre_merge_orientations:
            return True
        return self.pm(sc, sa, k) and self.pm(sc, sb, k)

    def _triple_facts(self, i, j, k) -> List[Fact]:
        facts = [_fact_inv("local"), _fact_inv("remote"), _fact_inv("third"),
                 _fact_pm("local", "remote", i), _fact_pm("local", "third", i), _fact_pm("remote", "third", j)]
        if self.config.check_both_pre_merge_orientations:
            facts += [_fact_pm("remote", "local", j), _fact_pm("third", "local", k), _fact_pm("third", "remote", k)]
        return facts

    # ── pipeline ──

    STAGE_NEEDS = {
        CheckStage.WELL_FORMEDNESS: (),
        CheckStage.COMPLIANCE: (),
        CheckStage.CONVERGENCE: ("leq", "merge", "invariant", "pre_merge", "operations"),
        CheckStage.SEQUENTIAL_SAFETY: ("initial_state", "merge", "invariant", "pre_merge", "operations"),
        CheckStage.CONCURRENT_SAFETY: ("merge", "invariant", "pre_merge", "operations"),
    }

    def run_stage(self, stage: CheckStage) -> StageResult:
        missing = [p for p in self.STAGE_NEEDS[stage] if not self.has(p)]
        if missing:
            return StageResult(stage=stage, verdict=Verdict.SKIPPED,
                               detail=f"requires {', '.join(missing)}")
        method = {
            CheckStage.WELL_FORMEDNESS: self.check_well_formedness,
            CheckStage.COMPLIANCE: self.check_compliance,
            CheckStage.CONVERGENCE: self.check_convergence,
            CheckStage.SEQUENTIAL_SAFETY: self.check_sequential_safety,
            CheckStage.CONCURRENT_SAFETY: self.check_concurrent_safety,
        }[stage]
        logger.info(f"{self.spec.name}: {stage.value} started")
        started = time.perf_counter()
        try:
            result = method()
        except DomainTooLarge as e:
            logger.warning(f"{self.spec.name}: {stage.value} aborted: {e.message}")
            return StageResult(stage=stage, verdict=Verdict.ABORTED, detail=e.message)
        except CheckerError as e:
            # an ill-guarded predicate (e.g. a map lookup keyed by ⊥) is a finding
            found = self.findings()
            found.add(("evaluation.error", None, None), lambda: Counterexample(
                stage=stage, assertion_id="evaluation.error",
                assertion=Fact(kind="compiles", label=type(e).__name__), note=e.message,
            ))
            result = _result(stage, found, [], detail=e.message)
        logger.info(
            f"{self.spec.name}: {stage.value} {result.verdict.value} "
            f"({time.perf_counter() - started:.2f}s, {sum(v.total for v in result.violations)} violations)"
        )
        return result

    def run(self, stages: Optional[Sequence[CheckStage]] = None) -> CheckReport:
        started = time.perf_counter()
        results: List[StageResult] = []
        halted: Optional[str] = None
        for stage in STAGE_ORDER:
            if stages is not None and stage not in stages:
                results.append(StageResult(stage=stage, verdict=Verdict.SKIPPED, detail="not requested"))
                continue
            if halted:
                results.append(StageResult(stage=stage, verdict=Verdict.SKIPPED, detail=halted))
                continue
            result = self.run_stage(stage)
            results.append(result)
            if result.verdict == Verdict.ABORTED:
                halted = f"{stage.value} aborted"
            elif result.verdict == Verdict.FAIL and (
                self.config.stop_on_first_failure or stage in (CheckStage.WELL_FORMEDNESS, CheckStage.COMPLIANCE)
            ):
                halted = f"{stage.value} failed"
        self.stats.duration_seconds = round(time.perf_counter() - started, 3)
        verdicts = {r.verdict for r in results}
        if Verdict.FAIL in verdicts:
            verdict = Verdict.FAIL
        elif Verdict.ABORTED in verdicts:
            verdict = Verdict.ABORTED
        else:
            verdict = Verdict.PASS
        return CheckReport(
            spec=self.spec.name,
            variant=dict(self.spec.variant),
            bounds=self.bounds.dict(),
            config=self.config,
            stages=results,
            statistics=self.stats,
            verdict=verdict,
        )

    # ── replay ──

    def replay(self, cex: Counterexample) -> ReplayResult:
        states = {role: self.layout.from_tree(tree) for role, tree in cex.witnesses.items()}
        matches = True
        for d in cex.derivations:
            if d.by == "initial":
                computed = self.bound.initial()
            elif d.by == "op":
                op = self.spec.operation(d.operation)
                computed = op.effect(self.layout, states[d.inputs[0]], dict(d.params), d.me)
            elif d.by == "merge":
                computed = self.merge(states[d.inputs[0]], states[d.inputs[1]], d.me)
            else:
                raise SchemaMismatch(f"unknown derivation '{d.by}'")
            if d.role in states:
                matches = matches and states[d.role] == computed
            else:
                states[d.role] = computed
        return ReplayResult(
            assertion_holds=self.eval_fact(cex.assertion, states),
            assumptions_hold=all(self.eval_fact(f, states) for f in cex.assumptions),
            derivations_match=matches,
        )


def _wellformed_id(e: CheckerError) -> str:
    if isinstance(e, UnknownIdentifier):
        return "wellformed.unknown_identifier"
    if isinstance(e, UnboundedComponent):
        return "wellformed.unbounded_component"
    return "wellformed.schema"


def _result(stage: CheckStage, found: Findings, warnings: List[str], detail: str = "",
            checked: Optional[Dict[str, int]] = None) -> StageResult:
    return StageResult(
        stage=stage,
        verdict=Verdict.FAIL if found else Verdict.PASS,
        counterexamples=found.counterexamples(),
        violations=found.summaries(),
        warnings=warnings,
        detail=detail,
        checked=checked or {},
    )


def _short(s: Any) -> str:
    return repr(s).replace(" ", "")


def _dedupe(items: List[str]) -> List[str]:
    return list(dict.fromkeys(items))


# ── public entry points ──

def check_well_formedness(spec: ObjectSpec, bounds: DomainBounds, config: Optional[CheckConfig] = None) -> StageResult:
    return Checker(spec, bounds, config).run_stage(CheckStage.WELL_FORMEDNESS)


def check_compliance(spec: ObjectSpec, bounds: Optional[DomainBounds] = None) -> StageResult:
    return Checker(spec, bounds or DomainBounds(), None).run_stage(CheckStage.COMPLIANCE)


def check_convergence(spec: ObjectSpec, bounds: DomainBounds, config: Optional[CheckConfig] = None) -> StageResult:
    return Checker(spec, bounds, config).run_stage(CheckStage.CONVERGENCE)


def check_sequential_safety(spec: ObjectSpec, bounds: DomainBounds,
                            config: Optional[CheckConfig] = None) -> StageResult:
    return Checker(spec, bounds, config).run_stage(CheckStage.SEQUENTIAL_SAFETY)


def check_concurrent_safety(spec: ObjectSpec, bounds: DomainBounds,
                            config: Optional[CheckConfig] = None) -> StageResult:
    return Checker(spec, bounds, config).run_stage(CheckStage.CONCURRENT_SAFETY)


def run_pipeline(spec: ObjectSpec, bounds: DomainBounds, config: Optional[CheckConfig] = None,
                 stages: Optional[Sequence[CheckStage]] = None) -> CheckReport:
    return Checker(spec, bounds, config).run(stages)


def replay_counterexample(spec: ObjectSpec, bounds: DomainBounds, cex: Counterexample) -> ReplayResult:
    """Re-derive a counterexample's states and re-evaluate its assertion and assumptions."""
    return Checker(spec, bounds).replay(cex)
