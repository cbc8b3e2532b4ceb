"""The checker's pair counter findings against the brute-force script at the repo root."""
import pytest

import oracle_pair_counter as oracle
from crdtcheck.checker import check_concurrent_safety
from crdtcheck.schemas import CheckConfig
from crdtcheck.specs import get_spec


@pytest.fixture(scope="module")
def oracle_findings():
    states = oracle.valid_states()
    pairs = oracle.mergeable_pairs(states)
    return states, pairs, oracle.op_violations(pairs)


@pytest.fixture(scope="module")
def checker_stage():
    spec, bounds = get_spec("pair_counter").make()
    return check_concurrent_safety(spec, bounds, CheckConfig(max_counterexamples_per_assertion=1))


def test_state_and_pair_counts_agree(oracle_findings, checker_stage):
    states, pairs, _ = oracle_findings
    assert len(states) == 66
    assert checker_stage.checked["valid_pairs"] == len(pairs)


def test_violation_totals_agree(oracle_findings, checker_stage):
    _, _, violations = oracle_findings
    from_checker = {
        (v.operation, v.orientation): v.total
        for v in checker_stage.violations
        if v.assertion_id == "op.preserves_pre_merge"
    }
    assert from_checker == oracle.totals(violations)


@pytest.fixture(scope="module")
def every_checker_violation():
    spec, bounds = get_spec("pair_counter").make()
    stage = check_concurrent_safety(spec, bounds, CheckConfig(max_counterexamples_per_assertion=100_000))
    assert all(v.shown == v.total for v in stage.violations)
    return stage


def test_violation_witnesses_agree(oracle_findings, every_checker_violation):
    _, _, violations = oracle_findings

    def pair(tree):
        return tree["n"], tree["m"]

    from_checker = [
        (c.operation, c.orientation, pair(c.witnesses["local"]), pair(c.witnesses["remote"]))
        for c in every_checker_violation.counterexamples
        if c.assertion_id == "op.preserves_pre_merge"
    ]
    from_oracle = [(op, orientation, local, remote) for op, orientation, local, remote, _ in violations]
    assert set(from_checker) == set(from_oracle)
    assert len(from_checker) == len(from_oracle)


def test_first_violation_agrees(oracle_findings, checker_stage):
    _, _, violations = oracle_findings
    op, orientation, local, remote, result = violations[0]
    cex = checker_stage.counterexamples[0]
    assert (cex.operation, cex.orientation) == (op, orientation)
    assert cex.witnesses["local"] == {"n": local[0], "m": local[1]}
    assert cex.witnesses["remote"] == {"n": remote[0], "m": remote[1]}
    assert cex.witnesses["result"] == {"n": result[0], "m": result[1]}


def test_merge_keeps_mergeability(oracle_findings, checker_stage):
    states, pairs, _ = oracle_findings
    assert oracle.merge_violations(states, pairs) == []
    assert "merge.preserves_pre_merge" not in checker_stage.assertion_ids


def test_oracle_script_exit_code(capsys):
    assert oracle.main() == 1
    out = capsys.readouterr().out
    assert "Valid states: 66" in out
    assert "✓ merge preserves mergeability" in out
