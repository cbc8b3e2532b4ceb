import pytest

from crdtcheck.domain import BoundedInt, StateSchema, make_bounds
from crdtcheck.errors import BadParams, PreconditionViolated, SchemaMismatch, UnknownIdentifier, UnknownOperation
from crdtcheck.expr import Predicate, comp, eq, le
from crdtcheck.lattice import ObjectSpec, OperationSpec, apply_op, eval_predicate, leq, merge_states, precondition
from crdtcheck.specs import get_spec


def bound_spec(name, **overrides):
    spec, bounds = get_spec(name).make(overrides)
    return spec.bind(bounds)


def counter(bound, n, m):
    return bound.layout.from_tree({"n": n, "m": m})


def test_initial_state_of_each_builtin_conforms():
    for name in ("pair_counter", "auction_unsafe", "auction_safe", "gset"):
        bound = bound_spec(name)
        assert bound.layout.conforms(bound.initial())


def test_apply_op_checks_the_precondition():
    bound = bound_spec("pair_counter")
    assert apply_op(bound, "incn", {}, None, counter(bound, 4, 5)) == counter(bound, 5, 5)
    with pytest.raises(PreconditionViolated) as exc:
        apply_op(bound, "incm", {}, None, counter(bound, 5, 5))
    assert exc.value.operation == "incm"
    assert exc.value.failing == ["n+m ≤ 9"]


def test_apply_op_rejects_unknown_operations_and_params():
    bound = bound_spec("auction_unsafe")
    s = bound.initial()
    with pytest.raises(UnknownOperation):
        apply_op(bound, "retract_bid", {}, "r1", s)
    with pytest.raises(BadParams):
        apply_op(bound, "place_bid", {"b": "b1"}, "r1", s)
    with pytest.raises(BadParams):
        apply_op(bound, "place_bid", {"b": "b7", "value": 1}, "r1", s)
    with pytest.raises(BadParams):
        apply_op(bound, "start_auction", {}, "r9", s)


def test_apply_op_rejects_nonconforming_input():
    bound = bound_spec("pair_counter")
    with pytest.raises(SchemaMismatch):
        apply_op(bound, "incn", {}, None, (13, 0))


def test_auction_happy_path_unsafe():
    bound = bound_spec("auction_unsafe")
    s = apply_op(bound, "start_auction", {}, "r1", bound.initial())
    s = apply_op(bound, "place_bid", {"b": "b1", "value": 1}, "r1", s)
    s = apply_op(bound, "place_bid", {"b": "b2", "value": 2}, "r2", s)
    with pytest.raises(PreconditionViolated) as exc:
        apply_op(bound, "close_auction", {"w": "b1"}, "r1", s)
    assert exc.value.failing == ["is_highest(bids, w)"]
    s = apply_op(bound, "close_auction", {"w": "b2"}, "r1", s)
    assert bound.layout.read(s, "status") == "CLOSED"
    assert eval_predicate(bound, "invariant", s).value


def test_bids_are_placed_only_at_their_home_replica():
    bound = bound_spec("auction_unsafe")
    s = apply_op(bound, "start_auction", {}, "r1", bound.initial())
    result = precondition(bound, "place_bid", s, "r1", {"b": "b2", "value": 1})
    assert result.failing() == ["home(b) = me"]


def test_tokens_gate_placing_and_closing():
    bound = bound_spec("auction_safe")
    s = apply_op(bound, "start_auction", {}, "r1", bound.initial())
    s = apply_op(bound, "place_bid", {"b": "b1", "value": 2}, "r1", s)
    with pytest.raises(PreconditionViolated) as exc:
        apply_op(bound, "close_auction", {"w": "b1"}, "r1", s)
    assert exc.value.failing == ["∀r. ¬tokens[r]"]
    s = apply_op(bound, "release_token", {}, "r1", s)
    with pytest.raises(PreconditionViolated):
        apply_op(bound, "place_bid", {"b": "b1", "value": 1}, "r1", s)
    s = apply_op(bound, "release_token", {}, "r2", s)
    s = apply_op(bound, "close_auction", {"w": "b1"}, "r2", s)
    assert eval_predicate(bound, "invariant", s).value


def test_merge_is_componentwise_join():
    bound = bound_spec("pair_counter")
    assert merge_states(bound, counter(bound, 5, 4), counter(bound, 4, 6), None) == counter(bound, 5, 6)


def test_auction_merge_keeps_higher_status_and_known_winner():
    bound = bound_spec("auction_unsafe")
    active = apply_op(bound, "start_auction", {}, "r1", bound.initial())
    bid = apply_op(bound, "place_bid", {"b": "b1", "value": 2}, "r1", active)
    closed = apply_op(bound, "close_auction", {"w": "b1"}, "r1", bid)
    merged = merge_states(bound, active, closed, "r2")
    assert bound.layout.to_tree(merged) == bound.layout.to_tree(closed)
    assert merge_states(bound, closed, active, "r1") == closed


def test_leq_follows_the_comparison_function():
    bound = bound_spec("pair_counter")
    assert leq(bound, counter(bound, 1, 2), counter(bound, 1, 3))
    assert not leq(bound, counter(bound, 2, 2), counter(bound, 1, 3))


def test_eval_predicate_accepts_ad_hoc_predicates():
    bound = bound_spec("pair_counter")
    p = Predicate.of(2, ("n agrees", eq(comp("n"), comp("n", 1))), ("m below", le(comp("m"), comp("m", 1))))
    result = eval_predicate(bound, p, counter(bound, 1, 4), counter(bound, 2, 3))
    assert not result.value
    assert result.failing() == ["n agrees", "m below"]


def test_pre_merge_breakdown_names_the_failing_clause():
    bound = bound_spec("pair_counter")
    result = eval_predicate(bound, "pre_merge", counter(bound, 5, 5), counter(bound, 4, 6))
    assert not result.value
    assert result.failing() == ["max(n,n′)+max(m,m′) ≤ 10"]


def test_compile_problems_are_collected_not_raised():
    broken = ObjectSpec(
        name="broken",
        schema=StateSchema.of([("n", BoundedInt("n"))]),
        leq=Predicate.of(2, le(comp("n"), comp("n", 1))),
        invariant=Predicate.of(1, le(comp("total"), 3)),
        operations=(OperationSpec("bump", (), Predicate.true(1), lambda layout, s, params, me: s),),
    )
    bound = broken.bind(make_bounds(ranges={"n": (0, 3)}))
    assert [part for part, _ in bound.problems] == ["invariant"]
    assert bound.has("leq")
    assert not bound.has("invariant")
    with pytest.raises(UnknownIdentifier):
        bound.compiled("invariant")


def test_instances_enumerate_parameter_domains_in_order():
    bound = bound_spec("auction_safe")
    place = bound.spec.operation("place_bid")
    rendered = [inst.render() for inst in bound.instances(place)]
    assert rendered == [f"place_bid({b}, {v})" for b in ("b1", "b2") for v in (0, 1, 2)]
