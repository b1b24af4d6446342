"""Non-convex baseline: minibatch SGD / Adam on three-layer parallel nets
with hand-derived gradients of loss plus path or weight-decay regularizer.

Training is vectorized over sub-networks (stacked weight tensors), which
keeps many-K sweeps fast; the public gradient helper mirrors the per-subnet
layout of ParallelNet.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .losses import loss_grad, loss_value
from .network import DimensionMismatchError, ParallelNet, TrainSpec, make_net

# smoothing inside the path-norm square root keeps the gradient finite at 0
PATH_SQRT_EPS = 1e-12


class DivergenceError(RuntimeError):
    pass


@dataclass
class SgdConfig:
    optimizer: str = "sgd"       # "sgd" or "adam"
    lr: float = 1e-2
    momentum: float = 0.9
    b1: float = 0.9
    b2: float = 0.999
    adam_eps: float = 1e-8
    batch: int = 32
    epochs: int = 100
    seed: int = 0
    reg: str = "path"
    beta: float = 1e-3
    init_scale: float = 1.0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def train_spec(self, loss: str = "squared") -> TrainSpec:
        return TrainSpec(beta=self.beta, loss=loss, reg=self.reg)


def init_net(d: int, m1: int, m2: int, K: int, seed: int = 0,
             init_scale: float = 1.0) -> ParallelNet:
    """Gaussian init scaled by init_scale / sqrt(fan_in) per layer."""
    rng = np.random.default_rng(seed)
    subnets = []
    for _ in range(K):
        W1 = rng.standard_normal((d, m1)) * (init_scale / np.sqrt(d))
        W2 = rng.standard_normal((m1, m2)) * (init_scale / np.sqrt(m1))
        w3 = rng.standard_normal(m2) * (init_scale / np.sqrt(m2))
        subnets.append((W1, W2, w3))
    return make_net(subnets)


def _stack(net: ParallelNet):
    if net.depth != 3:
        raise DimensionMismatchError("gradients are derived for L = 3 nets")
    W1 = np.stack([sn[0] for sn in net.subnets])   # (K, d, m1)
    W2 = np.stack([sn[1] for sn in net.subnets])   # (K, m1, m2)
    w3 = np.stack([sn[2] for sn in net.subnets])   # (K, m2)
    return W1, W2, w3


def _forward_stacked(W1, W2, w3, X):
    Z1 = np.einsum("nd,kdm->knm", X, W1)
    H1 = np.maximum(Z1, 0.0)
    Z2 = np.einsum("knm,kmp->knp", H1, W2)
    H2 = np.maximum(Z2, 0.0)
    yhat = np.einsum("knp,kp->n", H2, w3)
    return Z1, H1, Z2, H2, yhat


def _path_reg_stacked(W1, W2, w3):
    """Per-subnet path-regularizer values and gradients, root smoothed."""
    a1 = (W1 ** 2).sum(axis=1)                      # (K, m1)
    w3sq = w3 ** 2                                  # (K, m2)
    col = np.einsum("kmp,kp->km", W2 ** 2, w3sq)    # (K, m1)
    S = (a1 * col).sum(axis=1)                      # (K,)
    R = np.sqrt(S + PATH_SQRT_EPS)
    gW1 = W1 * (col / R[:, None])[:, None, :]
    gW2 = (a1 / R[:, None])[:, :, None] * W2 * w3sq[:, None, :]
    gw3 = w3 * np.einsum("km,kmp->kp", a1, W2 ** 2) / R[:, None]
    return np.sqrt(S), (gW1, gW2, gw3)


def _grad_stacked(W1, W2, w3, X, y, spec: TrainSpec):
    Z1, H1, Z2, H2, yhat = _forward_stacked(W1, W2, w3, X)
    delta = loss_grad(spec.loss, yhat, y)
    gw3 = np.einsum("knp,n->kp", H2, delta)
    dZ2 = (delta[None, :, None] * w3[:, None, :]) * (Z2 > 0.0)
    gW2 = np.einsum("knm,knp->kmp", H1, dZ2)
    dZ1 = np.einsum("knp,kmp->knm", dZ2, W2) * (Z1 > 0.0)
    gW1 = np.einsum("nd,knm->kdm", X, dZ1)
    if spec.reg == "path":
        _, (rW1, rW2, rw3) = _path_reg_stacked(W1, W2, w3)
    else:
        rW1, rW2, rw3 = 2.0 * W1, 2.0 * W2, 2.0 * w3
    return (gW1 + spec.beta * rW1, gW2 + spec.beta * rW2,
            gw3 + spec.beta * rw3)


def _objective_stacked(W1, W2, w3, X, y, spec: TrainSpec) -> float:
    _, _, _, _, yhat = _forward_stacked(W1, W2, w3, X)
    val = loss_value(spec.loss, yhat, y)
    if spec.reg == "path":
        R, _ = _path_reg_stacked(W1, W2, w3)
        reg = float(R.sum())
    else:
        reg = float((W1 ** 2).sum() + (W2 ** 2).sum() + (w3 ** 2).sum())
    return val + spec.beta * reg, val, reg


def grad_nonconvex(net: ParallelNet, X: np.ndarray, y: np.ndarray,
                   spec: TrainSpec):
    """Exact backprop gradients of the regularized objective (L = 3 only).

    The ReLU derivative at 0 is 0; a sub-network with zero path norm gets a
    (numerically) zero regularizer subgradient.  Returns one
    (gW1, gW2, gw3) tuple per sub-network.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[1] != net.input_dim:
        raise DimensionMismatchError("X width does not match the net")
    W1, W2, w3 = _stack(net)
    gW1, gW2, gw3 = _grad_stacked(W1, W2, w3, X, y, spec)
    return [(gW1[k], gW2[k], gw3[k]) for k in range(net.K)]


def train_sgd(net0: ParallelNet, X: np.ndarray, y: np.ndarray,
              config: SgdConfig, loss: str = "squared"):
    """Minibatch training with per-epoch seeded shuffling.

    Returns (trained net, history), history being one dict per epoch with
    the full-data objective, loss, and regularizer.  Deterministic per seed.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    spec = config.train_spec(loss)
    rng = np.random.default_rng(config.seed)
    params = list(_stack(net0))
    params = [P.copy() for P in params]
    vel = [np.zeros_like(P) for P in params]
    m_adam = [np.zeros_like(P) for P in params]
    v_adam = [np.zeros_like(P) for P in params]
    n = X.shape[0]
    history = []
    t_adam = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch):
            idx = order[start:start + config.batch]
            grads = _grad_stacked(*params, X[idx], y[idx], spec)
            t_adam += 1
            for j, g in enumerate(grads):
                if config.optimizer == "sgd":
                    vel[j] = config.momentum * vel[j] + g
                    params[j] = params[j] - config.lr * vel[j]
                else:
                    m_adam[j] = config.b1 * m_adam[j] + (1 - config.b1) * g
                    v_adam[j] = config.b2 * v_adam[j] + (1 - config.b2) * g ** 2
                    mhat = m_adam[j] / (1 - config.b1 ** t_adam)
                    vhat = v_adam[j] / (1 - config.b2 ** t_adam)
                    params[j] = params[j] - config.lr * mhat / \
                        (np.sqrt(vhat) + config.adam_eps)
        obj, lval, reg = _objective_stacked(*params, X, y, spec)
        if not np.isfinite(obj):
            raise DivergenceError(f"objective diverged at epoch {epoch}")
        history.append({"epoch": epoch, "objective": obj,
                        "loss": lval, "reg": config.beta * reg})
    net = make_net([(params[0][k], params[1][k], params[2][k])
                    for k in range(params[0].shape[0])])
    return net, history


def history_to_csv(history, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "objective", "loss", "reg"])
        for row in history:
            writer.writerow([row["epoch"], row["objective"], row["loss"], row["reg"]])
