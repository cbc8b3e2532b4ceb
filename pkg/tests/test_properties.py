import pytest
from hypothesis import assume, given, settings, strategies as st

from crdtcheck.lattice import apply_op, leq, merge_states, precondition
from crdtcheck.simulator import run_random
from crdtcheck.specs import get_spec


def bind(name):
    spec, bounds = get_spec(name).make()
    return spec.bind(bounds)


BOUND = {name: bind(name) for name in ("pair_counter", "gset", "auction_safe")}
STATES = {name: bound.layout.enumerate() for name, bound in BOUND.items()}

spec_names = st.sampled_from(sorted(BOUND))


def valid(bound, s):
    return bound.compiled("invariant").holds((s,))


@settings(deadline=None, max_examples=200)
@given(st.data())
def test_merge_is_idempotent(data):
    name = data.draw(spec_names)
    bound = BOUND[name]
    s = data.draw(st.sampled_from(STATES[name]))
    assume(valid(bound, s))
    assert merge_states(bound, s, s, bound.replicas[0]) == s


@settings(deadline=None, max_examples=200)
@given(st.data())
def test_merge_is_an_upper_bound_of_compatible_states(data):
    name = data.draw(spec_names)
    bound = BOUND[name]
    me = data.draw(st.sampled_from(bound.replicas))
    a = data.draw(st.sampled_from(STATES[name]))
    b = data.draw(st.sampled_from(STATES[name]))
    assume(valid(bound, a) and valid(bound, b))
    assume(bound.compiled("pre_merge").evaluate((a, b), me).value)
    m = merge_states(bound, a, b, me)
    assert leq(bound, a, m)
    assert leq(bound, b, m)


@settings(deadline=None, max_examples=200)
@given(st.data())
def test_counter_and_set_merges_commute(data):
    name = data.draw(st.sampled_from(["pair_counter", "gset"]))
    bound = BOUND[name]
    a = data.draw(st.sampled_from(STATES[name]))
    b = data.draw(st.sampled_from(STATES[name]))
    assert merge_states(bound, a, b, "r1") == merge_states(bound, b, a, "r2")


@settings(deadline=None, max_examples=300)
@given(st.data())
def test_enabled_operations_inflate(data):
    name = data.draw(spec_names)
    bound = BOUND[name]
    s = data.draw(st.sampled_from(STATES[name]))
    me = data.draw(st.sampled_from(bound.replicas))
    inst = data.draw(st.sampled_from(list(bound.all_instances())))
    assume(valid(bound, s))
    assume(precondition(bound, inst, s, me).value)
    after = apply_op(bound, inst.name, inst.param_dict(), me, s)
    assert leq(bound, s, after)
    assert bound.layout.conforms(after)


@settings(deadline=None, max_examples=100)
@given(st.data())
def test_state_values_survive_the_tree_form(data):
    name = data.draw(spec_names)
    layout = BOUND[name].layout
    s = data.draw(st.sampled_from(STATES[name]))
    assert layout.from_tree(layout.to_tree(s)) == s


@settings(deadline=None, max_examples=100)
@given(st.data())
def test_evaluation_is_deterministic(data):
    name = data.draw(spec_names)
    bound = BOUND[name]
    a = data.draw(st.sampled_from(STATES[name]))
    b = data.draw(st.sampled_from(STATES[name]))
    first = bound.compiled("pre_merge").evaluate((a, b), "r1")
    second = bound.compiled("pre_merge").evaluate((a, b), "r1")
    assert first.value == second.value
    assert first.failing() == second.failing()


ALL_SPECS = ["pair_counter", "auction_unsafe", "auction_safe", "gset"]


@pytest.mark.parametrize("name", ALL_SPECS)
def test_merge_is_idempotent_on_every_valid_state(name):
    bound = BOUND.get(name) or bind(name)
    for s in bound.layout.enumerate():
        if valid(bound, s):
            for me in bound.replicas:
                assert merge_states(bound, s, s, me) == s


@pytest.mark.parametrize("name", ALL_SPECS)
def test_simulated_transitions_are_monotone(name):
    bound = BOUND.get(name) or bind(name)
    for seed in range(5):
        trace = run_random(bound, seed=seed, steps=200, drop_probability=0.2, duplicate_probability=0.1)
        assert all(e.monotone is not False for e in trace.entries)
