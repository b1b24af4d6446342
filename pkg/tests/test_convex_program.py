import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convexrelu import convex_program as cp
from convexrelu.arrangements import enumerate_first_layer, enumerate_second_layer
from convexrelu.convex_program import (ConvexVariables, VariableBudgetError,
                                       all_sign_patterns, build,
                                       constraint_residuals, densify, fit_value,
                                       group_norm, objective,
                                       sample_sign_patterns)


def tiny_program(seed=0, n=4, d=2, m1=2, m2=1, beta=0.05, counts=(3, 3),
                 loss="squared"):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    first = enumerate_first_layer(X, mode="sampled", count=counts[0], seed=seed)
    second = enumerate_second_layer(X, first, m1, mode="sampled",
                                    count=counts[1], seed=seed + 1)
    signs = all_sign_patterns(m1)
    return build(X, y, first, second, signs, m1, m2, beta, loss=loss)


def random_vars(prog, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return ConvexVariables(scale * rng.standard_normal(
        (2, prog.S, prog.P2, prog.P1, prog.d, prog.m1)))


def test_sign_pattern_counts():
    assert len(all_sign_patterns(1)) == 2
    assert len(all_sign_patterns(3)) == 8
    sub = sample_sign_patterns(3, 4, seed=0)
    assert len(sub) >= 4
    assert (1, 1, 1) in {sp.signs for sp in sub}
    assert (-1, -1, -1) in {sp.signs for sp in sub}


def test_build_counts_and_budget():
    prog = tiny_program(n=5, d=2, m1=3, counts=(2, 2))
    assert prog.S == 8
    assert prog.var_count == 2 * 2 * 3 * 8 * prog.P1 * prog.P2
    with pytest.raises(VariableBudgetError):
        build(prog.X, prog.y, prog.first, prog.second, prog.signs, prog.m1,
              prog.m2, prog.beta, var_cap=10)


def test_dense_blocks_are_sign_free():
    # with m1 = 1 the two sign blocks hold identical columns D2 D1 X
    prog = tiny_program(n=3, d=1, m1=1, counts=(1, 1), seed=3)
    assert prog.S == 2
    dense = densify(prog)
    cols = prog.d * prog.m1 * prog.P1 * prog.P2
    assert np.array_equal(dense[:, :cols], dense[:, cols:])
    ref = prog.d2[:, 0:1] * prog.d1t[:, 0, 0:1] * prog.X  # spot value
    # spot-check one block against the hand product
    i = l = 0
    start = prog.column_offset(i, l, 0, 0)
    hand = prog.d2[:, l, None] * prog.d1t[:, i, 0, None] * prog.X
    assert np.allclose(dense[:, start:start + prog.d], hand)


def test_fit_value_matches_dense():
    prog = tiny_program(seed=1)
    vars = random_vars(prog, seed=2)
    dense = densify(prog)
    flat = vars.to_flat()
    half = flat.size // 2
    ref = dense @ (flat[:half] - flat[half:])
    assert np.max(np.abs(fit_value(prog, vars) - ref)) <= 1e-12


def test_fit_value_zero_and_single_column():
    prog = tiny_program(seed=4)
    zeros = ConvexVariables.zeros(prog)
    assert np.all(fit_value(prog, zeros) == 0.0)
    vars = ConvexVariables.zeros(prog)
    vars.data[0, 1, 0, 0, 0, 0] = 1.0  # one unit entry on the z side
    dense = densify(prog)
    col = prog.column_offset(0, 0, 1, 0)
    assert np.allclose(fit_value(prog, vars), dense[:, col])


def test_fit_key_mismatch():
    prog = tiny_program(seed=5)
    other = tiny_program(seed=5, m1=1)
    with pytest.raises(cp.KeyMismatchError):
        fit_value(prog, random_vars(other))


def test_group_norm_values_and_properties():
    prog = tiny_program(seed=6, d=2, m1=1)
    vars = ConvexVariables.zeros(prog)
    assert group_norm(vars.z) == 0.0
    vars.data[0, 0, 0, 0, :, 0] = [3.0, 4.0]
    assert group_norm(vars.z) == pytest.approx(5.0)
    # additivity over disjoint supports
    other = ConvexVariables.zeros(prog)
    other.data[0, 1, 0, 0, :, 0] = [1.0, 1.0]
    assert group_norm(vars.z + other.z) == \
        pytest.approx(group_norm(vars.z) + group_norm(other.z))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_group_norm_triangle_and_homogeneity(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((2, 3, 2, 2))
    b = rng.standard_normal((2, 3, 2, 2))
    c = float(rng.uniform(-3, 3))
    assert group_norm(a + b) <= group_norm(a) + group_norm(b) + 1e-9
    assert group_norm(c * a) == pytest.approx(abs(c) * group_norm(a))


def test_constraint_residuals_zero_vars():
    prog = tiny_program(seed=7)
    rep = constraint_residuals(prog, ConvexVariables.zeros(prog))
    assert rep.total == 0.0
    assert all(v == 0.0 for v in rep.per_block.values())


def test_single_violation_counts_its_slack():
    # one scalar inequality violated by 0.5 contributes exactly 0.5
    X = np.array([[1.0]])
    y = np.array([0.0])
    first = enumerate_first_layer(X, mode="exact")
    second = enumerate_second_layer(X, first, 1, mode="exact")
    signs = all_sign_patterns(1)
    prog = build(X, y, first, second, signs, 1, 1, 0.1)
    vars = ConvexVariables.zeros(prog)
    # pattern with bit 1 requires X z >= 0 for the (+1) sign block
    i_pos = [k for k, p in enumerate(prog.first.patterns) if p.mask == 1][0]
    l_any = 0
    s_pos = [k for k, sp in enumerate(prog.signs) if sp.signs == (1,)][0]
    vars.data[0, s_pos, l_any, i_pos, 0, 0] = -0.5
    rep = constraint_residuals(prog, vars)
    # first-layer slack 0.5; the second-layer term may add its own relu
    assert rep.per_block[("z", i_pos, l_any, s_pos)] >= 0.5 - 1e-12


def test_packed_network_is_feasible():
    # variables packed from a network whose activation patterns match the
    # chosen (D1, D2, signs) blocks produce zero residual
    rng = np.random.default_rng(8)
    X = rng.standard_normal((5, 2))
    y = rng.standard_normal(5)
    first = enumerate_first_layer(X, mode="exact")
    m1 = 2
    second = enumerate_second_layer(X, first, m1, mode="sampled", count=60, seed=0)
    signs = all_sign_patterns(m1)
    prog = build(X, y, first, second, signs, m1, 1, 0.1)
    filled = 0
    vars = ConvexVariables.zeros(prog)
    for i, (pat, wit) in enumerate(zip(first.patterns, first.witnesses)):
        if pat.mask == 0:
            continue
        for s in range(prog.S):
            # sign-scaled columns whose unscaled versions sit in the cone of
            # pattern i; the block's second-layer pattern is then read off
            # the summed masked response
            cols = np.stack([prog.sgn[s, j] * (0.5 + j) * wit
                             for j in range(m1)], axis=1)
            pre = np.einsum("nj,nj->n", prog.d1t[:, i, :], X @ cols)
            mask2 = int(sum(1 << r for r in range(5) if pre[r] > 0))
            l = next((k for k, p in enumerate(prog.second.patterns)
                      if p.mask == mask2), None)
            if l is None:
                continue
            vars.data[0, s, l, i] = cols
            filled += 1
    assert filled > 0
    rep = constraint_residuals(prog, vars)
    assert rep.total <= 1e-10


def test_objective_values():
    prog = tiny_program(seed=9)
    zeros = ConvexVariables.zeros(prog)
    assert objective(prog, zeros, 0.0) == pytest.approx(0.5 * prog.y @ prog.y)
    with pytest.raises(ValueError):
        objective(prog, zeros, -1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_objective_midpoint_convexity(seed):
    prog = tiny_program(seed=10)
    a = random_vars(prog, seed=seed)
    b = random_vars(prog, seed=seed + 1)
    mid = ConvexVariables((a.data + b.data) / 2.0)
    for lam in (0.0, 0.7):
        assert objective(prog, mid, lam) <= \
            (objective(prog, a, lam) + objective(prog, b, lam)) / 2.0 + 1e-9


def test_flat_round_trip():
    prog = tiny_program(seed=11)
    vars = random_vars(prog, seed=12)
    back = ConvexVariables.from_flat(vars.to_flat(), prog)
    assert np.array_equal(back.data, vars.data)


def test_block_accessor_and_keys():
    prog = tiny_program(seed=13)
    vars = random_vars(prog, seed=13)
    keys = list(prog.block_keys())
    assert len(keys) == prog.P1 * prog.P2 * prog.S
    i, l, s = keys[len(keys) // 2]
    assert np.array_equal(vars.block("z", i, l, s), vars.data[0, s, l, i])
    assert np.array_equal(vars.block("zp", i, l, s), vars.data[1, s, l, i])


def test_project_feasible_is_feasible_and_idempotent():
    prog = tiny_program(seed=14)
    vars = random_vars(prog, seed=15, scale=2.0)
    proj = cp.project_feasible(prog, vars)
    assert cp.penalty_total(prog, proj) <= 1e-9
    again = cp.project_feasible(prog, proj)
    assert np.allclose(again.data, proj.data, atol=1e-9)


def test_penalty_grad_matches_finite_differences():
    prog = tiny_program(seed=16, n=3, m1=2, counts=(2, 2))
    rng = np.random.default_rng(17)
    side = rng.standard_normal((prog.S, prog.P2, prog.P1, prog.d, prog.m1))
    val, grad = cp.penalty_value_grad(prog, side)
    h = 1e-7
    for _ in range(20):
        idx = tuple(rng.integers(0, s) for s in side.shape)
        pert = side.copy()
        pert[idx] += h
        vp, _ = cp.penalty_value_grad(prog, pert)
        pert[idx] -= 2 * h
        vm, _ = cp.penalty_value_grad(prog, pert)
        fd = (vp - vm) / (2 * h)
        assert abs(fd - grad[idx]) <= 1e-5 * (1 + abs(fd))


def test_meta_json_has_dims():
    import json

    prog = tiny_program(seed=18)
    doc = json.loads(prog.meta_json())
    assert doc["var_count"] == prog.var_count
    assert doc["P1"] == prog.P1 and doc["S"] == prog.S
