import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convexrelu.arrangements import (ActivationPattern, ArrangementSet,
                                     BudgetExceededError, EmptyArrangementError,
                                     SignPattern, enumerate_first_layer,
                                     enumerate_second_layer, pattern_of,
                                     union_sets, upper_bound_first,
                                     upper_bound_second, verify_cone)
from oracles import brute_force_patterns, lp_confirm


def test_two_point_line_has_three_patterns():
    X = np.array([[1.0], [-1.0]])
    aset = enumerate_first_layer(X, mode="exact")
    assert {p.mask for p in aset.patterns} == {0b00, 0b01, 0b10}


def test_three_generic_points_in_plane():
    # configuration with the origin inside the hull: every sector pattern
    # is nonzero and there are exactly six of them
    rng = np.random.default_rng(0)
    X = rng.standard_normal((3, 2))
    aset = enumerate_first_layer(X, mode="exact")
    nonzero = {p.mask for p in aset.patterns} - {0}
    oracle = brute_force_patterns(X, n_dirs=10_000, seed=1) - {0}
    assert nonzero == oracle
    assert len(oracle) == 6


def test_zero_matrix_degenerate():
    aset = enumerate_first_layer(np.zeros((4, 2)), mode="exact")
    assert len(aset) == 1
    assert aset.patterns[0].mask == 0
    assert aset.degenerate


@pytest.mark.parametrize("seed", range(6))
def test_exact_matches_brute_force(seed):
    # the oracle is direction sampling plus an independent LP confirmation:
    # sampling alone provably misses thin cones, so equality is asserted as
    # (sampled set is covered) and (every claimed pattern is LP-confirmed)
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    d = int(rng.integers(1, 4))
    X = rng.standard_normal((n, d))
    exact = enumerate_first_layer(X, mode="exact")
    masks = {p.mask for p in exact.patterns}
    sampled = brute_force_patterns(X, seed=seed)
    assert sampled <= masks
    assert all(lp_confirm(X, m) for m in masks - {0})
    r = int(np.linalg.matrix_rank(X))
    assert len(exact) <= upper_bound_first(n, r) + 1
    for p, w in zip(exact.patterns, exact.witnesses):
        assert verify_cone(X, w, p)


def test_witnesses_realize_their_patterns_exactly():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((6, 3))
    aset = enumerate_first_layer(X, mode="exact")
    for p, w in zip(aset.patterns, aset.witnesses):
        z = X @ w
        relu = np.maximum(z, 0.0)
        assert np.array_equal(relu, p.bits() * z)


def test_sampled_reproducible_and_subset_of_exact():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((5, 2))
    a = enumerate_first_layer(X, mode="sampled", count=25, seed=42)
    b = enumerate_first_layer(X, mode="sampled", count=25, seed=42)
    assert [p.mask for p in a.patterns] == [p.mask for p in b.patterns]
    assert all(np.array_equal(u, v) for u, v in zip(a.witnesses, b.witnesses))
    exact = enumerate_first_layer(X, mode="exact")
    assert {p.mask for p in a.patterns} <= {p.mask for p in exact.patterns}


def test_ordering_is_deterministic():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 2))
    a = enumerate_first_layer(X, mode="exact")
    b = enumerate_first_layer(X, mode="exact")
    assert [p.mask for p in a.patterns] == [p.mask for p in b.patterns]
    assert sorted(p.mask for p in a.patterns) == [p.mask for p in a.patterns]


def test_budget_exceeded():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((8, 3))
    with pytest.raises(BudgetExceededError):
        enumerate_first_layer(X, mode="exact", budget=3)


def test_second_layer_single_pattern_matches_definition():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((4, 2))
    first = enumerate_first_layer(X, mode="exact")
    pick = first.patterns[len(first) // 2]
    wit = first.witnesses[len(first) // 2]
    one = ArrangementSet(n=4, patterns=(pick,), witnesses=(wit,), source="exact")
    second = enumerate_second_layer(X, one, 1, mode="exact")
    ref = set()
    D = pick.bits()[:, None]
    for M in (D * X, -(D * X)):
        if np.any(M):
            ref |= {p.mask for p in enumerate_first_layer(M, mode="exact").patterns}
        else:
            ref.add(0)
    ref.add(0)
    assert {p.mask for p in second.patterns} == ref


def test_second_layer_count_within_bound():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((4, 2))
    first = enumerate_first_layer(X, mode="sampled", count=3, seed=0)
    second = enumerate_second_layer(X, first, 2, mode="exact", budget=100000)
    r = int(np.linalg.matrix_rank(X))
    assert len(second) <= upper_bound_second(4, r, 2) + 1


def test_second_layer_empty_first_raises():
    X = np.ones((3, 2))
    empty = ArrangementSet(n=3, patterns=(), witnesses=(), source="sampled")
    with pytest.raises(EmptyArrangementError):
        enumerate_second_layer(X, empty, 1, mode="sampled", count=5, seed=0)


def test_upper_bound_first_values():
    assert upper_bound_first(2, 1) == 2
    assert upper_bound_first(3, 2) == 6
    # large arguments stay exact integers
    assert upper_bound_first(200, 50) == 2 * sum(
        __import__("math").comb(199, k) for k in range(50))


@given(n=st.integers(2, 12), r=st.integers(1, 4), m1=st.integers(1, 3))
def test_second_bound_dominates_first(n, r, m1):
    assert upper_bound_second(n, r, m1) >= upper_bound_first(n, r)


def test_verify_cone_examples():
    X = np.array([[2.0], [-3.0]])
    w = np.array([1.0])
    assert verify_cone(X, w, ActivationPattern.from_bits([1, 0]))
    assert not verify_cone(X, w, ActivationPattern.from_bits([1, 1]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pattern_of_always_verifies(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    d = int(rng.integers(1, 5))
    X = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    p = pattern_of(X, w)
    assert verify_cone(X, w, p)
    # the relu identity holds exactly on the cone
    z = X @ w
    assert np.array_equal(np.maximum(z, 0.0), p.bits() * z)


def test_serialization_round_trip():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((5, 2))
    aset = enumerate_first_layer(X, mode="sampled", count=10, seed=3)
    back = ArrangementSet.from_json(aset.to_json())
    assert back.n == aset.n
    assert [p.mask for p in back.patterns] == [p.mask for p in aset.patterns]
    for u, v in zip(back.witnesses, aset.witnesses):
        assert np.array_equal(u, v)
    assert back.source == "sampled" and back.seed == 3


def test_union_sets_merges_and_sorts():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((5, 2))
    a = enumerate_first_layer(X, mode="sampled", count=4, seed=0)
    b = enumerate_first_layer(X, mode="sampled", count=4, seed=9)
    u = union_sets(a, b)
    assert {p.mask for p in u.patterns} == \
        {p.mask for p in a.patterns} | {p.mask for p in b.patterns}
    masks = [p.mask for p in u.patterns]
    assert masks == sorted(masks)


def test_complement_patterns_are_distinct_members():
    X = np.array([[1.0], [-2.0], [0.5]])
    aset = enumerate_first_layer(X, mode="exact")
    masks = {p.mask for p in aset.patterns}
    for p in aset.patterns:
        if p.mask not in (0, (1 << p.n) - 1) and p.complement().mask in masks:
            assert p.complement().mask != p.mask


def test_sign_pattern_validation():
    with pytest.raises(ValueError):
        SignPattern((1, 0, -1))
    sp = SignPattern((1, -1))
    assert sp.m1 == 2
