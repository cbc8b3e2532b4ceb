"""
Single sealed-bid auction, with and without per-replica bidding tokens.

Bids are statically partitioned: bid k originates at replica k mod R
(home(b)), and only its home replica may place it. Unplaced bids carry
amount 0.

Variant options:
    amount_agreement  common | all           scope of the amount-agreement clause
    winner_reading    guarded | all_revoked | any_revoked
    placement         origin | literal       per-owner or joint token/bid clauses
"""
from typing import Dict, List, Tuple

from ..domain import (
    REPLICA_DOMAIN,
    BoundedInt,
    DomainBounds,
    FixedMap,
    Flag,
    IdDomain,
    Layout,
    OptionalRef,
    OrderedEnum,
    Record,
    StateSchema,
    make_bounds,
)
from ..errors import BadBounds
from ..expr import (
    BOTTOM,
    ME,
    Expr,
    Predicate,
    and_,
    attr,
    comp,
    eq,
    exists,
    forall,
    ge,
    get,
    gt,
    home,
    implies,
    le,
    level,
    lt,
    ne,
    not_,
    or_,
    var,
)
from ..lattice import ObjectSpec, OperationSpec, Param
from .base import SpecEntry

INVALID, ACTIVE, CLOSED = "INVALID", "ACTIVE", "CLOSED"
STATUS_LEVELS = (INVALID, ACTIVE, CLOSED)

BID = Record((("placed", Flag(top=True)), ("amount", BoundedInt("amount"))))


def schema(with_tokens: bool) -> StateSchema:
    components = [
        ("status", OrderedEnum(STATUS_LEVELS)),
        ("winner", OptionalRef("bid")),
        ("bids", FixedMap("bid", BID)),
    ]
    if with_tokens:
        components.append(("tokens", FixedMap(REPLICA_DOMAIN, Flag(top=False))))
    return StateSchema.of(components, [IdDomain("bid", "b")])


# ── expression helpers (which: 0 = local/lower, 1 = remote/higher) ──

def status(which: int = 0) -> Expr:
    return comp("status", which)


def winner(which: int = 0) -> Expr:
    return comp("winner", which)


def placed(which: int, b) -> Expr:
    return attr(get(comp("bids", which), b), "placed")


def amount(which: int, b) -> Expr:
    return attr(get(comp("bids", which), b), "amount")


def token(which: int, r) -> Expr:
    return get(comp("tokens", which), r)


def is_highest(bids_of: int, w: Expr, amount_of: int) -> Expr:
    """w is placed-highest among the bids of one state, comparing against w's amount in another.

    Ties go to the lowest bid id.
    """
    b = var("b")
    return and_(
        ne(w, BOTTOM),
        forall("b", "bid", implies(
            placed(bids_of, b),
            or_(
                lt(amount(bids_of, b), amount(amount_of, w)),
                and_(eq(amount(bids_of, b), amount(amount_of, w)), le(w, b)),
            ),
        )),
    )


def all_revoked(which: int = 0) -> Expr:
    return forall("r", REPLICA_DOMAIN, not_(token(which, var("r"))))


def all_held(which: int = 0) -> Expr:
    return forall("r", REPLICA_DOMAIN, token(which, var("r")))


def any_revoked(which: int = 0) -> Expr:
    return exists("r", REPLICA_DOMAIN, not_(token(which, var("r"))))


def any_held(which: int = 0) -> Expr:
    return exists("r", REPLICA_DOMAIN, token(which, var("r")))


# ── predicates ──

def invariant(with_tokens: bool) -> Predicate:
    b = var("b")
    clauses: List[Tuple[str, Expr]] = [
        ("∀b. placed(b) ⟹ status ≥ ACTIVE ∧ amount(b) > 0",
         forall("b", "bid", implies(placed(0, b), and_(ge(status(), level(ACTIVE)), gt(amount(0, b), 0))))),
        ("∀b. ¬placed(b) ⟹ amount(b) = 0",
         forall("b", "bid", implies(not_(placed(0, b)), eq(amount(0, b), 0)))),
        ("status ≤ ACTIVE ⟹ winner = ⊥",
         implies(le(status(), level(ACTIVE)), eq(winner(), BOTTOM))),
        ("status = CLOSED ⟹ winner ≠ ⊥ ∧ placed(winner)",
         implies(eq(status(), level(CLOSED)), and_(ne(winner(), BOTTOM), placed(0, winner())))),
        ("status = CLOSED ⟹ is_highest(bids, winner)",
         implies(eq(status(), level(CLOSED)), is_highest(0, winner(), 0))),
    ]
    if with_tokens:
        clauses.append(("status = CLOSED ⟹ ∀r. ¬tokens[r]",
                        implies(eq(status(), level(CLOSED)), all_revoked())))
    return Predicate.of(1, *clauses)


def comparison(with_tokens: bool) -> Predicate:
    b, r = var("b"), var("r")
    clauses = [
        ("status ≤ status′", le(status(0), status(1))),
        ("winner = ⊥ ∨ winner′ ≠ ⊥", or_(eq(winner(0), BOTTOM), ne(winner(1), BOTTOM))),
        ("∀b. placed(b) ⟹ placed′(b)", forall("b", "bid", implies(placed(0, b), placed(1, b)))),
    ]
    if with_tokens:
        clauses.append(("∀r. tokens′[r] ⟹ tokens[r]",
                        forall("r", REPLICA_DOMAIN, implies(token(1, r), token(0, r)))))
    return Predicate.of(2, *clauses)


def pre_merge(with_tokens: bool, variant: Dict[str, str]) -> Predicate:
    b = var("b")
    # the local replica holds the unprimed state, so me is the merging replica
    clauses: List[Tuple[str, Expr]] = [
        ("status = CLOSED ⟹ is_highest(bids, winner) ∧ is_highest(bids′, winner)",
         implies(eq(status(0), level(CLOSED)), and_(is_highest(0, winner(0), 0), is_highest(1, winner(0), 0)))),
        ("status′ = CLOSED ⟹ is_highest(bids, winner′) ∧ is_highest(bids′, winner′)",
         implies(eq(status(1), level(CLOSED)), and_(is_highest(0, winner(1), 1), is_highest(1, winner(1), 1)))),
    ]
    if variant.get("amount_agreement", "common") == "all":
        clauses.append(("∀b. amount(b) = amount′(b)",
                        forall("b", "bid", eq(amount(0, b), amount(1, b)))))
    else:
        clauses.append(("∀b. placed(b) ∧ placed′(b) ⟹ amount(b) = amount′(b)",
                        forall("b", "bid", implies(and_(placed(0, b), placed(1, b)), eq(amount(0, b), amount(1, b))))))
    if not with_tokens:
        return Predicate.of(2, *clauses)

    clauses.append(("tokens[me] ⟹ tokens′[me]", implies(token(0, ME), token(1, ME))))
    clauses.extend(_placement_clauses(variant.get("placement", "origin")))
    clauses.extend(_winner_clauses(variant.get("winner_reading", "guarded")))
    return Predicate.of(2, *clauses)


def _placement_clauses(reading: str) -> List[Tuple[str, Expr]]:
    b, r = var("b"), var("r")
    if reading == "literal":
        def unseen(extra: List[Expr]) -> Expr:
            return forall("r", REPLICA_DOMAIN, forall("b", "bid", implies(
                and_(*extra, not_(token(0, r)), not_(placed(0, b))), not_(placed(1, b)))))

        return [
            ("∀r,b. ¬tokens[r] ∧ ¬placed(b) ⟹ ¬placed′(b)", unseen([])),
            ("∀r,b. r ≠ me ∧ ¬tokens[r] ∧ ¬placed(b) ⟹ ¬placed′(b)", unseen([ne(r, ME)])),
        ]
    return [(
        "∀b. (home(b) = me ∨ ¬tokens[home(b)]) ∧ ¬placed(b) ⟹ ¬placed′(b)",
        forall("b", "bid", implies(
            and_(or_(eq(home(b), ME), not_(token(0, home(b)))), not_(placed(0, b))),
            not_(placed(1, b)),
        )),
    )]


def _winner_clauses(reading: str) -> List[Tuple[str, Expr]]:
    agree = or_(eq(winner(1), winner(0)), eq(winner(1), BOTTOM))
    none = and_(eq(winner(0), BOTTOM), eq(winner(1), BOTTOM))
    if reading == "all_revoked":
        return [
            ("(∀r. ¬tokens[r]) ⟹ winner′ ∈ {winner, ⊥}", implies(all_revoked(), agree)),
            ("(∃r. tokens[r]) ⟹ winner = ⊥ ∧ winner′ = ⊥", implies(any_held(), none)),
        ]
    if reading == "any_revoked":
        return [
            ("(∃r. ¬tokens[r]) ⟹ winner′ ∈ {winner, ⊥}", implies(any_revoked(), agree)),
            ("(∀r. tokens[r]) ⟹ winner = ⊥ ∧ winner′ = ⊥", implies(all_held(), none)),
        ]
    return [
        ("(∀r. ¬tokens[r]) ⟹ winner′ ∈ {winner, ⊥} ∨ winner = ⊥",
         implies(all_revoked(), or_(eq(winner(1), winner(0)), eq(winner(1), BOTTOM), eq(winner(0), BOTTOM)))),
        ("(∀r. tokens[r]) ⟹ winner = ⊥ ∧ winner′ = ⊥", implies(all_held(), none)),
    ]


# ── operations ──

def operations(with_tokens: bool) -> Tuple[OperationSpec, ...]:
    b, w, value = var("b"), var("w"), var("value")

    start_pre = [("status = INVALID", eq(status(), level(INVALID))), ("winner = ⊥", eq(winner(), BOTTOM))]
    place_pre = [
        ("¬placed(b)", not_(placed(0, b))),
        ("status = ACTIVE", eq(status(), level(ACTIVE))),
        ("winner = ⊥", eq(winner(), BOTTOM)),
        ("value > 0", gt(value, 0)),
        ("home(b) = me", eq(home(b), ME)),
    ]
    close_pre = [
        ("status = ACTIVE", eq(status(), level(ACTIVE))),
        ("winner = ⊥", eq(winner(), BOTTOM)),
        ("placed(w)", placed(0, w)),
        ("is_highest(bids, w)", is_highest(0, w, 0)),
    ]
    if with_tokens:
        start_pre.append(("∀r. tokens[r]", all_held()))
        place_pre.append(("tokens[me]", token(0, ME)))
        close_pre.append(("∀r. ¬tokens[r]", all_revoked()))

    ops = [
        OperationSpec("start_auction", (), Predicate.of(1, *start_pre), _start),
        OperationSpec(
            "place_bid",
            (Param("b", "id", "bid"), Param("value", "range", "amount")),
            Predicate.of(1, *place_pre),
            _place,
        ),
        OperationSpec("close_auction", (Param("w", "id", "bid"),), Predicate.of(1, *close_pre), _close),
    ]
    if with_tokens:
        release_pre = Predicate.of(
            1,
            ("tokens[me]", token(0, ME)),
            ("status ≥ ACTIVE", ge(status(), level(ACTIVE))),
        )
        ops.append(OperationSpec("release_token", (), release_pre, _release, reads_me=True))
    return tuple(ops)


def _start(layout: Layout, s, params, me):
    return layout.assign(s, status=ACTIVE)


def _place(layout: Layout, s, params, me):
    s = layout.update(s, "bids", params["b"], "placed", True)
    return layout.update(s, "bids", params["b"], "amount", params["value"])


def _close(layout: Layout, s, params, me):
    return layout.assign(s, status=CLOSED, winner=params["w"])


def _release(layout: Layout, s, params, me):
    return layout.update(s, "tokens", me, False)


def _merge(layout: Layout, local, other, me):
    rank = layout.component("status")[1].rank
    s1, s2 = layout.read(local, "status"), layout.read(other, "status")
    w2 = layout.read(other, "winner")
    bids = tuple(
        (p1 or p2, a1 if p1 else a2)
        for (p1, a1), (p2, a2) in zip(layout.read(local, "bids"), layout.read(other, "bids"))
    )
    merged = {
        "status": s1 if rank[s1] >= rank[s2] else s2,
        "winner": w2 if w2 is not None else layout.read(local, "winner"),
        "bids": bids,
    }
    if "tokens" in layout.root.index:
        merged["tokens"] = tuple(a and b for a, b in zip(layout.read(local, "tokens"), layout.read(other, "tokens")))
    return layout.assign(local, **merged)


def _initial(layout: Layout):
    tree = {
        "status": INVALID,
        "winner": None,
        "bids": {b: {"placed": False, "amount": 0} for b in layout.domain_values("bid")},
    }
    if "tokens" in layout.root.index:
        tree["tokens"] = {r: True for r in layout.domain_values(REPLICA_DOMAIN)}
    return layout.from_tree(tree)


def _check_bounds(bounds: DomainBounds) -> None:
    if bounds.replica_count < 2:
        raise BadBounds("the auction needs at least 2 replicas")
    if bounds.domains.get("bid", 0) < 2:
        raise BadBounds("the auction needs at least 2 bid slots")
    lo, hi = bounds.ranges.get("amount", (None, None))
    if lo != 0 or hi < 2:
        raise BadBounds("amount range must be [0, k] with k ≥ 2")


def make_auction_unsafe(bounds: DomainBounds, variant: Dict[str, str] = None) -> ObjectSpec:
    _check_bounds(bounds)
    variant = dict(variant or {})
    return ObjectSpec(
        name="auction_unsafe",
        schema=schema(False),
        initial_state=_initial,
        leq=comparison(False),
        operations=operations(False),
        merge=_merge,
        pre_merge=pre_merge(False, variant),
        invariant=invariant(False),
        description="single auction, no concurrency control (sequentially safe only)",
        variant=variant,
    )


def make_auction_safe(bounds: DomainBounds, variant: Dict[str, str] = None) -> ObjectSpec:
    _check_bounds(bounds)
    variant = dict(variant or {})
    return ObjectSpec(
        name="auction_safe",
        schema=schema(True),
        initial_state=_initial,
        leq=comparison(True),
        operations=operations(True),
        merge=_merge,
        pre_merge=pre_merge(True, variant),
        invariant=invariant(True),
        description="single auction guarded by per-replica bidding tokens",
        variant=variant,
    )


def _bounds(params: Dict[str, int]) -> DomainBounds:
    return make_bounds(
        replica_count=params["replicas"],
        domains={"bid": params["bids"]},
        ranges={"amount": (0, params["amount_max"])},
        enumeration_cap=params["cap"],
    )


DEFAULTS = {"replicas": 2, "bids": 2, "amount_max": 2}

unsafe_entry = SpecEntry(
    name="auction_unsafe",
    description="single auction, no concurrency control (sequentially safe only)",
    maker=make_auction_unsafe,
    defaults=DEFAULTS,
    to_bounds=_bounds,
    variants={"amount_agreement": ("common", "all")},
)

safe_entry = SpecEntry(
    name="auction_safe",
    description="single auction guarded by per-replica bidding tokens",
    maker=make_auction_safe,
    defaults=DEFAULTS,
    to_bounds=_bounds,
    variants={
        "amount_agreement": ("common", "all"),
        "winner_reading": ("guarded", "all_revoked", "any_revoked"),
        "placement": ("origin", "literal"),
    },
)
