"""
Deterministic replica simulator.

Replicas are plain data. A replica's state changes only by an operation it
originates (the replica is `me`) or by merging a delivered full-state
snapshot. The network is a set of in-flight messages with no ordering
guarantee: scripts or a seeded PRNG decide what is delivered, dropped or
duplicated. After every transition the affected replica's invariant is
evaluated and recorded, along with whether the transition was an inflation.
"""
import logging
import random
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, Field, ValidationError

from .errors import BadParams, MalformedEvent, UnknownMessage, UnknownOperation
from .lattice import BoundSpec, StateValue
from .schemas import TraceEntry, TraceReport

logger = logging.getLogger(__name__)

POLICIES = ("skip_and_record", "halt")


@dataclass
class Replica:
    id: str
    state: StateValue
    transition_count: int = 0


@dataclass(frozen=True)
class NetworkMessage:
    msg_id: int
    label: str
    sender: str
    to: str
    payload: StateValue


# ── events ────────────────────────────────────────────────────────────────────

class Invoke(BaseModel):
    replica: str
    op: str
    params: Dict[str, Any] = {}


class Send(BaseModel):
    sender: str = Field(..., alias="from")
    to: str
    id: Optional[str] = None

    class Config:
        allow_population_by_field_name = True


class Deliver(BaseModel):
    id: str


class Drop(BaseModel):
    id: str


class Duplicate(BaseModel):
    id: str
    as_: Optional[str] = Field(None, alias="as")

    class Config:
        allow_population_by_field_name = True


class CheckInvariantAll(BaseModel):
    pass


class CheckConverged(BaseModel):
    pass


class AntiEntropy(BaseModel):
    rounds: Optional[int] = None


Event = Union[Invoke, Send, Deliver, Drop, Duplicate, CheckInvariantAll, CheckConverged, AntiEntropy]

EVENT_TAGS = {
    "invoke": Invoke,
    "send": Send,
    "deliver": Deliver,
    "drop": Drop,
    "duplicate": Duplicate,
    "check_invariant_all": CheckInvariantAll,
    "check_converged": CheckConverged,
    "anti_entropy": AntiEntropy,
}


def parse_event(raw: Any, index: int = 0) -> Event:
    """Parse one tagged record, e.g. {"deliver": "m1"} or {"send": {"from": "r1", "to": "r2"}}."""
    if not isinstance(raw, dict) or len(raw) != 1:
        raise MalformedEvent(f"event {index}: expected a single-key tagged record, got {raw!r}", index=index)
    (tag, body), = raw.items()
    if tag not in EVENT_TAGS:
        raise MalformedEvent(f"event {index}: unknown event '{tag}'", index=index)
    if isinstance(body, str) and tag in ("deliver", "drop", "duplicate"):
        body = {"id": body}
    if body is None:
        body = {}
    try:
        return EVENT_TAGS[tag].parse_obj(body)
    except ValidationError as e:
        raise MalformedEvent(f"event {index} ({tag}): {e}", index=index) from e


def event_tag(event: Event) -> str:
    for tag, cls in EVENT_TAGS.items():
        if isinstance(event, cls):
            return tag
    raise MalformedEvent(f"not an event: {event!r}")


# ── simulation ────────────────────────────────────────────────────────────────

class Halted(Exception):
    pass


class Simulation:
    def __init__(self, bound: BoundSpec, policy: str = "skip_and_record"):
        if policy not in POLICIES:
            raise MalformedEvent(f"unknown policy '{policy}'; expected one of {', '.join(POLICIES)}")
        self.bound = bound
        self.layout = bound.layout
        self.policy = policy
        init = bound.initial()
        self.replicas: Dict[str, Replica] = {r: Replica(r, init) for r in bound.replicas}
        self.in_flight: Dict[str, NetworkMessage] = {}
        self.entries: List[TraceEntry] = []
        self.next_msg = 1
        self.verdict = "clean"
        self.first_violation: Optional[int] = None
        self.converged: Optional[bool] = None

    @property
    def violated(self) -> bool:
        return self.first_violation is not None

    def replica(self, rid: str) -> Replica:
        if rid not in self.replicas:
            raise MalformedEvent(f"unknown replica '{rid}'; replicas are {', '.join(self.replicas)}")
        return self.replicas[rid]

    def _message(self, label: str) -> NetworkMessage:
        if label not in self.in_flight:
            raise UnknownMessage(label)
        return self.in_flight[label]

    def _record(self, event: str, replica: Optional[Replica] = None, detail: str = "",
                before: Optional[StateValue] = None, msg_id: Optional[int] = None,
                rejected: bool = False, failing: Optional[List[str]] = None) -> TraceEntry:
        entry = TraceEntry(index=len(self.entries), event=event, detail=detail, msg_id=msg_id, rejected=rejected,
                           failing_clauses=list(failing or []))
        if replica is not None:
            entry.replica = replica.id
            if before is not None and not rejected:
                result = self.bound.compiled("invariant").evaluate((replica.state,))
                entry.before = self.layout.to_tree(before)
                entry.after = self.layout.to_tree(replica.state)
                entry.invariant = result.value
                entry.failing_clauses = result.failing()
                if self.bound.has("leq"):
                    entry.monotone = self.bound.compiled("leq").holds((before, replica.state))
                    if not entry.monotone:
                        logger.warning(f"{replica.id}: transition {entry.index} is not an inflation")
                if not result.value:
                    self._violation(entry)
        self.entries.append(entry)
        return entry

    def _violation(self, entry: TraceEntry) -> None:
        if self.first_violation is None:
            self.first_violation = entry.index
            self.verdict = "violation"
            logger.info(f"Invariant violated at step {entry.index} on {entry.replica}: {entry.failing_clauses}")

    # ── transitions ──

    def invoke(self, rid: str, op_name: str, params: Dict[str, Any]) -> TraceEntry:
        r = self.replica(rid)
        try:
            op = self.bound.spec.operation(op_name)
            self.bound.check_params(op, params)
        except (UnknownOperation, BadParams) as e:
            raise MalformedEvent(f"invoke {op_name} at {rid}: {e.message}") from e
        shown = f"{op_name}({', '.join(f'{k}={v}' for k, v in params.items())})"
        pre = self.bound.compiled(f"{op.name}.pre").evaluate((r.state,), rid, params)
        if not pre.value:
            entry = self._record("invoke", r, f"{shown} rejected", rejected=True, failing=pre.failing())
            if self.policy == "halt":
                self.verdict = "halted"
                raise Halted(entry.detail)
            return entry
        before = r.state
        r.state = op.effect(self.layout, before, dict(params), rid)
        r.transition_count += 1
        return self._record("invoke", r, shown, before=before)

    def send(self, sender: str, to: str, label: Optional[str] = None) -> str:
        src = self.replica(sender)
        self.replica(to)
        msg_id = self.next_msg
        self.next_msg += 1
        label = label or f"m{msg_id}"
        if label in self.in_flight:
            raise MalformedEvent(f"message '{label}' is already in flight")
        self.in_flight[label] = NetworkMessage(msg_id, label, sender, to, src.state)
        self._record("send", detail=f"{label}: {sender} → {to}", msg_id=msg_id)
        return label

    def deliver(self, label: str) -> TraceEntry:
        msg = self._message(label)
        del self.in_flight[label]
        r = self.replicas[msg.to]
        before = r.state
        r.state = self.bound.spec.merge(self.layout, before, msg.payload, r.id)
        r.transition_count += 1
        return self._record("deliver", r, f"{label}: merge {msg.sender} → {msg.to}", before=before, msg_id=msg.msg_id)

    def drop(self, label: str) -> None:
        msg = self._message(label)
        del self.in_flight[label]
        self._record("drop", detail=f"{label}: {msg.sender} → {msg.to} lost", msg_id=msg.msg_id)

    def duplicate(self, label: str, as_label: Optional[str] = None) -> str:
        msg = self._message(label)
        msg_id = self.next_msg
        self.next_msg += 1
        copy_label = as_label or f"{label}+{msg_id}"
        if copy_label in self.in_flight:
            raise MalformedEvent(f"message '{copy_label}' is already in flight")
        self.in_flight[copy_label] = NetworkMessage(msg_id, copy_label, msg.sender, msg.to, msg.payload)
        self._record("duplicate", detail=f"{label} → {copy_label}", msg_id=msg_id)
        return copy_label

    def check_invariant_all(self) -> bool:
        failing = []
        inv = self.bound.compiled("invariant")
        for r in self.replicas.values():
            result = inv.evaluate((r.state,))
            failing.extend(f"{r.id}: {label}" for label in result.failing())
        entry = self._record("check_invariant_all", detail="all replicas" if not failing else "violated",
                             failing=failing)
        entry.invariant = not failing
        if failing:
            self._violation(entry)
        return not failing

    def check_converged(self) -> bool:
        states = {r.state for r in self.replicas.values()}
        self.converged = len(states) == 1
        self._record("check_converged", detail="converged" if self.converged else f"{len(states)} distinct states")
        return self.converged

    def anti_entropy(self, rounds: Optional[int] = None) -> None:
        """Every replica sends to every other and all of it is delivered, `rounds` times."""
        ids = list(self.replicas)
        for _ in range(rounds or len(ids)):
            labels = [self.send(a, b) for a in ids for b in ids if a != b]
            for label in labels:
                self.deliver(label)

    def apply(self, event: Event) -> None:
        if isinstance(event, Invoke):
            self.invoke(event.replica, event.op, event.params)
        elif isinstance(event, Send):
            self.send(event.sender, event.to, event.id)
        elif isinstance(event, Deliver):
            self.deliver(event.id)
        elif isinstance(event, Drop):
            self.drop(event.id)
        elif isinstance(event, Duplicate):
            self.duplicate(event.id, event.as_)
        elif isinstance(event, CheckInvariantAll):
            self.check_invariant_all()
        elif isinstance(event, CheckConverged):
            self.check_converged()
        elif isinstance(event, AntiEntropy):
            self.anti_entropy(event.rounds)
        else:
            raise MalformedEvent(f"not an event: {event!r}")

    def report(self, scenario: Optional[str] = None, seed: Optional[int] = None) -> TraceReport:
        if self.verdict == "clean" and self.converged is False:
            self.verdict = "diverged"
        return TraceReport(
            spec=self.bound.spec.name,
            variant=dict(self.bound.spec.variant),
            bounds=self.bound.bounds.dict(),
            scenario=scenario,
            seed=seed,
            policy=self.policy,
            verdict=self.verdict,
            first_violation=self.first_violation,
            converged=self.converged,
            replicas={r.id: self.layout.to_tree(r.state) for r in self.replicas.values()},
            entries=self.entries,
        )


# ── runners ───────────────────────────────────────────────────────────────────

def run_scenario(bound: BoundSpec, events: List[Union[Event, Dict[str, Any]]], policy: str = "skip_and_record",
                 name: Optional[str] = None) -> TraceReport:
    """Execute events in order; the verdict is the first invariant violation, if any."""
    parsed = [e if isinstance(e, BaseModel) else parse_event(e, k) for k, e in enumerate(events)]
    sim = Simulation(bound, policy)
    logger.info(f"Scenario {name or '<inline>'}: {len(parsed)} events on {bound.spec.name}")
    try:
        for event in parsed:
            sim.apply(event)
    except Halted as e:
        logger.info(f"Scenario halted: {e}")
    report = sim.report(scenario=name)
    logger.info(f"Scenario {name or '<inline>'} finished: {report.verdict}")
    return report


def run_random(bound: BoundSpec, seed: int, steps: int, drop_probability: float = 0.0,
               duplicate_probability: float = 0.0, settle: bool = True) -> TraceReport:
    """Seeded random execution: enabled invokes, sends with loss/duplication, out-of-order deliveries.

    Stops at the first invariant violation. Otherwise ends with a full
    anti-entropy phase followed by a convergence check.
    """
    if steps <= 0:
        raise BadParams("steps must be positive")
    for name, p in (("drop", drop_probability), ("duplicate", duplicate_probability)):
        if not 0.0 <= p <= 1.0:
            raise BadParams(f"{name} probability must be within [0, 1], got {p}")
    rng = random.Random(seed)
    sim = Simulation(bound)
    ids = list(sim.replicas)
    instances = list(bound.all_instances())
    for _ in range(steps):
        action = rng.choices(("invoke", "send", "deliver"), weights=(4, 3, 3))[0]
        if action == "deliver" and sim.in_flight:
            sim.deliver(rng.choice(list(sim.in_flight)))
        elif action == "send" and len(ids) > 1:
            sender = rng.choice(ids)
            label = sim.send(sender, rng.choice([r for r in ids if r != sender]))
            if rng.random() < drop_probability:
                sim.drop(label)
            elif rng.random() < duplicate_probability:
                sim.duplicate(label)
        else:
            rid = rng.choice(ids)
            state = sim.replicas[rid].state
            enabled = [
                inst for inst in instances
                if bound.compiled(f"{inst.name}.pre").holds((state,), rid, inst.param_dict())
            ]
            if enabled:
                inst = rng.choice(enabled)
                sim.invoke(rid, inst.name, inst.param_dict())
        if sim.violated:
            break
    if settle and not sim.violated:
        sim.anti_entropy()
        sim.check_converged()
    report = sim.report(seed=seed)
    logger.info(f"Random run seed={seed}: {report.verdict} after {len(report.entries)} entries")
    return report


def check_converged(replicas: Union[Dict[str, Replica], List[Replica]]) -> bool:
    """True iff all replica states are equal."""
    values = replicas.values() if isinstance(replicas, dict) else replicas
    return len({r.state for r in values}) <= 1
