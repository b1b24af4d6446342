import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convexrelu.network import (DimensionMismatchError, ParallelNet, TrainSpec,
                                embed_resnet, embed_standard, forward, make_net,
                                net_from_json, net_to_json, objective_nonconvex,
                                path_regularizer, rescale, unit_path_norms)


def random_net(rng, d=None, dims=None, K=None, L=3, scale=1.0):
    d = d or int(rng.integers(1, 4))
    K = K or int(rng.integers(1, 4))
    if dims is None:
        dims = [int(rng.integers(1, 4)) for _ in range(L - 1)]
    subnets = []
    for _ in range(K):
        mats = []
        prev = d
        for m in dims:
            mats.append(scale * rng.standard_normal((prev, m)))
            prev = m
        mats.append(scale * rng.standard_normal(prev))
        subnets.append(mats)
    return make_net(subnets)


def test_forward_identity_kills_negative():
    net = make_net([[np.eye(2), np.eye(2), np.array([1.0, 1.0])]])
    out = forward(net, np.array([[1.0, -2.0]]))
    assert out == pytest.approx([1.0])


def test_forward_zero_net():
    net = make_net([[np.zeros((2, 3)), np.zeros((3, 2)), np.zeros(2)]])
    assert np.all(forward(net, np.random.randn(4, 2)) == 0.0)


def test_forward_additive_over_subnets():
    rng = np.random.default_rng(0)
    sn = [rng.standard_normal((2, 3)), rng.standard_normal((3, 2)),
          rng.standard_normal(2)]
    X = rng.standard_normal((5, 2))
    one = make_net([sn])
    two = make_net([sn, sn])
    assert np.allclose(forward(two, X), 2.0 * forward(one, X))


def test_forward_dim_mismatch():
    net = make_net([[np.eye(2), np.eye(2), np.ones(2)]])
    with pytest.raises(DimensionMismatchError):
        forward(net, np.ones((3, 5)))


def test_path_regularizer_hand_value():
    net = make_net([[np.array([[2.0]]), np.array([[3.0]]), np.array([5.0])]])
    assert path_regularizer(net) == pytest.approx(30.0)


def test_path_regularizer_zero_and_duplication():
    zero = make_net([[np.zeros((2, 2)), np.zeros((2, 1)), np.zeros(1)]])
    assert path_regularizer(zero) == 0.0
    rng = np.random.default_rng(1)
    sn = [rng.standard_normal((2, 2)), rng.standard_normal((2, 2)),
          rng.standard_normal(2)]
    assert path_regularizer(make_net([sn, sn])) == \
        pytest.approx(2 * path_regularizer(make_net([sn])))


def test_rescale_scalar_path():
    net = make_net([[np.array([[2.0]]), np.array([[3.0]]), np.array([5.0])]])
    out = rescale(net)
    W1, W2, w3 = out.subnets[0]
    assert W1 == pytest.approx(np.array([[2.0]]))
    assert W2 == pytest.approx(np.array([[0.5]]))
    assert w3 == pytest.approx(np.array([30.0]))
    X = np.array([[1.0], [-2.0]])
    assert np.allclose(forward(out, X), forward(net, X))
    assert sum(np.linalg.norm(sn[-1]) for sn in out.subnets) == pytest.approx(30.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([2, 3]))
def test_rescale_invariances(seed, L):
    rng = np.random.default_rng(seed)
    net = random_net(rng, L=L)
    out = rescale(net)
    X = rng.standard_normal((6, net.input_dim))
    assert np.allclose(forward(out, X), forward(net, X), atol=1e-10)
    assert abs(path_regularizer(net) -
               sum(np.linalg.norm(sn[-1]) for sn in out.subnets)) <= 1e-10
    for r in unit_path_norms(out):
        live = r > 1e-12
        assert np.all(np.abs(r[live] - 1.0) <= 1e-12)


def test_rescale_fixed_point():
    rng = np.random.default_rng(5)
    net = rescale(random_net(rng))
    again = rescale(net)
    for sa, sb in zip(net.subnets, again.subnets):
        for A, B in zip(sa, sb):
            assert np.allclose(A, B, atol=1e-12)


def test_rescale_prunes_dead_subnet():
    rng = np.random.default_rng(6)
    live = [rng.standard_normal((2, 2)), rng.standard_normal((2, 2)),
            rng.standard_normal(2)]
    dead = [rng.standard_normal((2, 2)), np.zeros((2, 2)), rng.standard_normal(2)]
    net = make_net([live, dead])
    out = rescale(net)
    assert out.K == 1
    X = rng.standard_normal((4, 2))
    assert np.allclose(forward(out, X), forward(net, X))


def test_positive_homogeneity():
    rng = np.random.default_rng(2)
    net = random_net(rng, L=3)
    c = 1.7
    scaled = make_net([[sn[0] * c, sn[1], sn[2] / c] for sn in net.subnets])
    X = rng.standard_normal((5, net.input_dim))
    assert np.allclose(forward(scaled, X), forward(net, X), atol=1e-12)


def test_embed_standard():
    rng = np.random.default_rng(3)
    layers = [rng.standard_normal((2, 3)), rng.standard_normal((3, 2)),
              rng.standard_normal(2)]
    X = rng.standard_normal((6, 2))
    single = embed_standard(layers, K=1)
    plain = make_net([layers])
    assert np.allclose(forward(single, X), forward(plain, X))
    tripled = embed_standard(layers, K=3)
    assert np.allclose(forward(tripled, X), 3 * forward(plain, X))
    exact = embed_standard(layers, K=3, exact_sum=True)
    assert np.allclose(forward(exact, X), forward(plain, X), atol=1e-12)


def test_embed_resnet_matches_residual_form():
    rng = np.random.default_rng(4)
    d, m3 = 3, 2
    W1 = rng.standard_normal((d, d))
    W2 = rng.standard_normal((d, d))
    W3 = rng.standard_normal((d, m3))
    w4 = rng.standard_normal(m3)
    net = embed_resnet(W1, W2, W3, w4)
    X = np.abs(rng.standard_normal((7, d)))  # nonnegative inputs
    relu = lambda z: np.maximum(z, 0.0)
    expected = relu(relu(relu(X @ W1) @ W2) @ W3) @ w4 + relu(X @ W3) @ w4
    assert np.max(np.abs(forward(net, X) - expected)) <= 1e-12


def test_embed_resnet_negative_inputs_only_flagged():
    rng = np.random.default_rng(8)
    d = 2
    net = embed_resnet(rng.standard_normal((d, d)), rng.standard_normal((d, d)),
                       rng.standard_normal((d, 2)), rng.standard_normal(2))
    X = rng.standard_normal((5, d))  # has negative entries
    relu = lambda z: np.maximum(z, 0.0)
    W3, w4 = net.subnets[1][2], net.subnets[1][3]
    expected = forward(make_net([net.subnets[0]]), X) + relu(X @ W3) @ w4
    mismatch = np.max(np.abs(forward(net, X) - expected))
    assert np.isfinite(mismatch)  # documented: equality may fail off-domain


def test_objective_zero_net_and_beta_zero():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((4, 2))
    y = rng.standard_normal(4)
    zero = make_net([[np.zeros((2, 2)), np.zeros((2, 1)), np.zeros(1)]])
    spec = TrainSpec(beta=0.5, loss="squared", reg="path")
    assert objective_nonconvex(zero, X, y, spec) == pytest.approx(0.5 * y @ y)
    net = random_net(rng)
    Xn = rng.standard_normal((4, net.input_dim))
    free = TrainSpec(beta=0.0, loss="squared", reg="path")
    r = forward(net, Xn) - y
    assert objective_nonconvex(net, Xn, y, free) == pytest.approx(0.5 * r @ r)


def test_objective_invariant_under_rescale():
    rng = np.random.default_rng(10)
    spec = TrainSpec(beta=0.3, loss="squared", reg="path")
    for _ in range(100):
        net = random_net(rng, L=int(rng.integers(2, 4)))
        X = rng.standard_normal((5, net.input_dim))
        y = rng.standard_normal(5)
        before = objective_nonconvex(net, X, y, spec)
        out = rescale(net)
        after = 0.5 * np.sum((forward(out, X) - y) ** 2) + \
            spec.beta * sum(np.linalg.norm(sn[-1]) for sn in out.subnets)
        assert abs(before - after) <= 1e-10 * (1 + abs(before))


def test_objective_permutation_invariant():
    rng = np.random.default_rng(11)
    net = random_net(rng, K=3)
    perm = make_net([net.subnets[2], net.subnets[0], net.subnets[1]])
    X = rng.standard_normal((5, net.input_dim))
    y = rng.standard_normal(5)
    spec = TrainSpec(beta=0.1)
    assert objective_nonconvex(net, X, y, spec) == \
        pytest.approx(objective_nonconvex(perm, X, y, spec))


def test_json_round_trip_lossless():
    rng = np.random.default_rng(12)
    net = random_net(rng, L=3)
    back = net_from_json(net_to_json(net))
    assert back.dims == net.dims and back.K == net.K
    for sa, sb in zip(net.subnets, back.subnets):
        for A, B in zip(sa, sb):
            assert np.array_equal(A, B)


def test_trainspec_validation():
    with pytest.raises(ValueError):
        TrainSpec(beta=-1.0)
    with pytest.raises(ValueError):
        TrainSpec(beta=1.0, loss="absolute")
    TrainSpec(beta=0.0)  # boundary allowed for pure-loss objectives
