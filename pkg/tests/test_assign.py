import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from memosort.assign import solve
from memosort.reference import brute_force_assignment


def test_single_entry():
    res = solve([[0.2]], gate=0.8)
    assert res.matches == [(0, 0)]
    assert res.unmatched_rows == [] and res.unmatched_cols == []


def test_two_by_two():
    cost = np.array([[1.0, 2.0], [2.0, 1.0]])
    res = solve(cost)
    assert res.matches == [(0, 0), (1, 1)]
    assert res.total_cost(cost) == 2.0


def test_gate_demotes_after_solving():
    cost = np.array([[0.1, 0.2], [0.3, 0.9]])
    res = solve(cost, gate=0.5)
    # optimum is (0,1)+(1,0) = 0.5; neither pair is above the gate
    assert res.matches == [(0, 1), (1, 0)]
    res = solve(np.array([[0.9]]), gate=0.5)
    assert res.matches == [] and res.unmatched_rows == [0] and res.unmatched_cols == [0]


def test_infinite_entries_are_forbidden():
    cost = np.array([[np.inf, 1.0], [np.inf, 2.0]])
    res = solve(cost)
    assert len(res.matches) == 1 and res.matches[0][1] == 1
    assert res.unmatched_cols == [0]
    assert solve(np.full((2, 2), np.inf)).matches == []


def test_empty_and_rectangular():
    assert solve(np.zeros((0, 3))).unmatched_cols == [0, 1, 2]
    assert solve(np.zeros((2, 0))).unmatched_rows == [0, 1]
    res = solve(np.array([[5.0, 1.0, 3.0]]))
    assert res.matches == [(0, 1)] and res.unmatched_cols == [0, 2]
    res = solve(np.array([[5.0], [1.0], [3.0]]))
    assert res.matches == [(1, 0)] and res.unmatched_rows == [0, 2]


def test_bad_input():
    with pytest.raises(ValueError):
        solve([[np.nan]])
    with pytest.raises(ValueError):
        solve(np.zeros(3))
    with pytest.raises(ValueError):
        solve([[1.0]], gate=math.inf)


def _lexmin_optimum(cost):
    """Lexicographically smallest (row -> col) optimal full matching, by enumeration."""
    n, m = cost.shape
    best, best_key = None, None
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            total = sum(cost[i, c] for i, c in enumerate(cols))
            key = (round(total, 9), cols)
            if best_key is None or key < best_key:
                best_key, best = key, sorted(enumerate(cols))
    else:
        for rows in itertools.permutations(range(n), m):
            pairs = sorted((r, c) for c, r in enumerate(rows))
            total = sum(cost[r, c] for r, c in pairs)
            key = (round(total, 9), tuple(r for r, _ in pairs), tuple(c for _, c in pairs))
            if best_key is None or key < best_key:
                best_key, best = key, pairs
    return best


def test_ties_break_lexicographically():
    assert solve(np.zeros((3, 3))).matches == [(0, 0), (1, 1), (2, 2)]
    assert solve(np.ones((2, 4))).matches == [(0, 0), (1, 1)]
    rng = np.random.default_rng(5)
    for _ in range(300):
        n, m = rng.integers(1, 5, size=2)
        cost = rng.integers(0, 3, size=(n, m)).astype(float)
        if n <= m:
            assert solve(cost).matches == _lexmin_optimum(cost)
        else:
            got = solve(cost)
            assert got.total_cost(cost) == pytest.approx(brute_force_assignment(cost))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(0, 10)))
def test_matches_brute_force(cost):
    res = solve(cost)
    assert res.total_cost(cost) == pytest.approx(brute_force_assignment(cost), abs=1e-9)
    assert len(res.matches) == min(cost.shape)
    assert len({r for r, _ in res.matches}) == len(res.matches)
    assert len({c for _, c in res.matches}) == len(res.matches)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.floats(0, 1)),
       st.floats(-5, 5))
def test_constant_shift_keeps_matching(cost, shift):
    base = solve(cost)
    shifted = solve(cost + shift)
    assert shifted.total_cost(cost) == pytest.approx(base.total_cost(cost), abs=1e-9)
