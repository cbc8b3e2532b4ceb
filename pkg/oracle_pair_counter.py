#!/usr/bin/env python3
"""
Brute-force oracle for the pair counter
Recomputes the concurrent-safety findings with plain loops, independent of crdtcheck
"""
import sys
from itertools import product

LIMIT = 10
OPS = ("incn", "incm")


def inv(s):
    return s[0] + s[1] <= LIMIT


def pre_merge(a, b):
    return max(a[0], b[0]) + max(a[1], b[1]) <= LIMIT


def pre_inc(s):
    return s[0] + s[1] <= LIMIT - 1


def apply(op, s):
    return (s[0] + 1, s[1]) if op == "incn" else (s[0], s[1] + 1)


def merge(a, b):
    return (max(a[0], b[0]), max(a[1], b[1]))


def valid_states(n_max=12, m_max=12):
    return [s for s in product(range(n_max + 1), range(m_max + 1)) if inv(s)]


def mergeable_pairs(states):
    return [(a, b) for a in states for b in states if pre_merge(a, b) and pre_merge(b, a)]


def op_violations(pairs, n_max=12, m_max=12):
    """(op, orientation, local, remote, result) for every broken op.preserves_pre_merge, in canonical order."""
    found = []
    for a, b in pairs:
        for op in OPS:
            if not pre_inc(a):
                continue
            r = apply(op, a)
            if r[0] > n_max or r[1] > m_max:
                continue
            if not pre_merge(r, b):
                found.append((op, "local", a, b, r))
            if not pre_merge(b, r):
                found.append((op, "remote", a, b, r))
    return found


def merge_violations(states, pairs):
    """Triples where merging two mergeable states breaks mergeability with a third."""
    found = []
    for a, b in pairs:
        m = merge(a, b)
        for c in states:
            if pre_merge(a, c) and pre_merge(c, a) and pre_merge(b, c) and pre_merge(c, b):
                if not (pre_merge(m, c) and pre_merge(c, m)):
                    found.append((a, b, c))
    return found


def totals(violations):
    out = {}
    for op, orientation, *_ in violations:
        out[(op, orientation)] = out.get((op, orientation), 0) + 1
    return out


def main(n_max=12, m_max=12):
    states = valid_states(n_max, m_max)
    pairs = mergeable_pairs(states)
    print(f"Valid states: {len(states)}")
    print(f"Mergeable pairs: {len(pairs)}")

    violations = op_violations(pairs, n_max, m_max)
    for (op, orientation), count in sorted(totals(violations).items()):
        print(f"  - {op} ({orientation}): {count} violations")
    if violations:
        op, orientation, a, b, r = violations[0]
        print(f"\nFirst: {op} on {a} with remote {b} gives {r}, max-sum {max(r[0], b[0]) + max(r[1], b[1])}")

    broken = merge_violations(states, pairs)
    if broken:
        print(f"\n✗ merge breaks mergeability in {len(broken)} triples")
    else:
        print("\n✓ merge preserves mergeability")
    return 1 if violations or broken else 0


if __name__ == "__main__":
    sys.exit(main())
