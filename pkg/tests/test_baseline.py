import numpy as np
import pytest

from convexrelu.baseline import (DivergenceError, SgdConfig, grad_nonconvex,
                                 history_to_csv, init_net, train_sgd)
from convexrelu.network import TrainSpec, forward, make_net, objective_nonconvex
from oracles import central_diff_grads


def away_from_kinks(net, X, margin=1e-3):
    """True when every preactivation clears the ReLU kink by a margin."""
    for W1, W2, w3 in net.subnets:
        Z1 = X @ W1
        if np.any(np.abs(Z1) < margin):
            return False
        Z2 = np.maximum(Z1, 0.0) @ W2
        if np.any(np.abs(Z2) < margin):
            return False
    return True


def sample_net_and_data(seed, reg="path", loss="squared"):
    rng = np.random.default_rng(seed)
    d, m1, m2, K, n = (int(rng.integers(1, 4)), int(rng.integers(1, 4)),
                       int(rng.integers(1, 3)), int(rng.integers(1, 3)),
                       int(rng.integers(2, 6)))
    while True:
        net = init_net(d, m1, m2, K, seed=int(rng.integers(0, 2**31)),
                       init_scale=1.0)
        X = rng.standard_normal((n, d))
        if away_from_kinks(net, X):
            break
    y = rng.standard_normal(n)
    spec = TrainSpec(beta=float(rng.uniform(0.01, 0.5)), loss=loss, reg=reg)
    return net, X, y, spec


@pytest.mark.parametrize("seed", range(30))
def test_gradients_match_central_differences(seed):
    reg = "path" if seed % 3 else "weight_decay"
    net, X, y, spec = sample_net_and_data(seed, reg=reg)
    grads = grad_nonconvex(net, X, y, spec)
    ref = central_diff_grads(net, X, y, spec)
    for g_sn, r_sn in zip(grads, ref):
        for g, r in zip(g_sn, r_sn):
            denom = max(np.linalg.norm(r), 1e-8)
            assert np.linalg.norm(g - r) / denom <= 1e-5


def test_path_gradient_hand_value():
    net = make_net([[np.array([[2.0]]), np.array([[3.0]]), np.array([5.0])]])
    X = np.array([[0.0]])  # no data signal; pure regularizer gradient
    y = np.array([0.0])
    spec = TrainSpec(beta=1.0, loss="squared", reg="path")
    g = grad_nonconvex(net, X, y, spec)
    assert g[0][0][0, 0] == pytest.approx(15.0, rel=1e-9)


def test_zero_gradient_at_flat_zero():
    net = make_net([[np.zeros((2, 2)), np.zeros((2, 1)), np.zeros(1)]])
    X = np.random.default_rng(0).standard_normal((3, 2))
    y = np.zeros(3)
    spec = TrainSpec(beta=0.0, loss="squared", reg="path")
    for g_sn in grad_nonconvex(net, X, y, spec):
        for g in g_sn:
            assert np.all(g == 0.0)


def test_grad_depth_guard():
    net = make_net([[np.eye(2), np.ones(2)]])  # two layers
    with pytest.raises(Exception):
        grad_nonconvex(net, np.eye(2), np.ones(2), TrainSpec(beta=0.1))


def test_lr_zero_keeps_net_and_history_flat():
    rng = np.random.default_rng(1)
    net0 = init_net(2, 2, 1, 2, seed=0)
    X = rng.standard_normal((6, 2))
    y = rng.standard_normal(6)
    config = SgdConfig(lr=0.0, batch=3, epochs=4, seed=0, beta=0.01)
    net, history = train_sgd(net0, X, y, config)
    for sa, sb in zip(net0.subnets, net.subnets):
        for A, B in zip(sa, sb):
            assert np.array_equal(A, B)
    objs = [h["objective"] for h in history]
    assert max(objs) == min(objs)


def test_training_decreases_objective():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((12, 2))
    y = rng.standard_normal(12)
    net0 = init_net(2, 3, 1, 3, seed=1, init_scale=0.5)
    config = SgdConfig(lr=5e-3, batch=12, epochs=400, seed=0, beta=0.002)
    net, history = train_sgd(net0, X, y, config)
    spec = config.train_spec()
    assert history[-1]["objective"] < objective_nonconvex(net0, X, y, spec)
    assert history[-1]["objective"] == pytest.approx(
        objective_nonconvex(net, X, y, spec))


def test_adam_variant_runs_and_descends():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((10, 2))
    y = rng.standard_normal(10)
    net0 = init_net(2, 2, 2, 2, seed=2, init_scale=0.5)
    config = SgdConfig(optimizer="adam", lr=1e-2, batch=5, epochs=200,
                       seed=0, beta=1e-3)
    _, history = train_sgd(net0, X, y, config)
    assert history[-1]["objective"] < history[0]["objective"]


def test_determinism_per_seed():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((8, 2))
    y = rng.standard_normal(8)
    for net_seed in range(20):  # need a net that is alive on the data
        net0 = init_net(2, 2, 1, 2, seed=net_seed)
        if np.std(forward(net0, X)) > 0.1:
            break
    config = SgdConfig(lr=1e-2, batch=4, epochs=20, seed=7, beta=1e-3)
    _, h1 = train_sgd(net0, X, y, config)
    _, h2 = train_sgd(net0, X, y, config)
    assert [r["objective"] for r in h1] == [r["objective"] for r in h2]
    other = SgdConfig(lr=1e-2, batch=4, epochs=20, seed=8, beta=1e-3)
    _, h3 = train_sgd(net0, X, y, other)
    assert [r["objective"] for r in h3] != [r["objective"] for r in h1]


def test_divergence_raises():
    rng = np.random.default_rng(5)
    X = 10.0 * rng.standard_normal((6, 2))
    y = rng.standard_normal(6)
    net0 = init_net(2, 3, 2, 3, seed=4, init_scale=3.0)
    config = SgdConfig(lr=10.0, batch=6, epochs=200, seed=0, beta=1e-3)
    with pytest.raises(DivergenceError):
        train_sgd(net0, X, y, config)


def test_history_csv(tmp_path):
    rng = np.random.default_rng(6)
    X = rng.standard_normal((4, 2))
    y = rng.standard_normal(4)
    net0 = init_net(2, 1, 1, 1, seed=5)
    _, history = train_sgd(net0, X, y, SgdConfig(lr=1e-3, batch=2, epochs=3,
                                                 seed=0, beta=1e-3))
    path = tmp_path / "hist.csv"
    history_to_csv(history, str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,objective,loss,reg"
    assert len(lines) == 4


def test_config_validation():
    with pytest.raises(ValueError):
        SgdConfig(lr=-1.0)
    with pytest.raises(ValueError):
        SgdConfig(batch=0)
    with pytest.raises(ValueError):
        SgdConfig(optimizer="rmsprop")
