"""Parallel ReLU networks: forward pass, path regularizer, rescaling, and
embeddings of standard / residual architectures.

A parallel net sums K sub-networks, each a plain ReLU stack
relu(...relu(X W_1)... W_{L-1}) w_L with a scalar output.  The path
regularizer sums, per sub-network, the square root of the total squared
weight product over all input-to-output paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .losses import loss_value

# Path norms below this are treated as dead and zeroed out by rescale.
DEAD_PATH_TOL = 1e-14


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TrainSpec:
    """Objective description: convex loss, regularizer kind, strength."""

    beta: float
    loss: str = "squared"
    reg: str = "path"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.loss not in ("squared", "hinge", "logistic", "l2"):
            raise ValueError(f"unsupported loss {self.loss!r}")
        if self.reg not in ("path", "weight_decay"):
            raise ValueError(f"unsupported regularizer {self.reg!r}")


@dataclass(frozen=True)
class ParallelNet:
    """K sub-networks with identical layer dimensions.

    Each sub-network is a tuple (W_1, ..., W_{L-1}, w_L) where the W_l are
    2-d weight matrices chaining d -> m_1 -> ... -> m_{L-1} and w_L is a
    vector of length m_{L-1}.
    """

    subnets: tuple[tuple[np.ndarray, ...], ...]

    def __post_init__(self):
        if not self.subnets:
            raise ValueError("need at least one sub-network")
        ref = self.dims
        for sn in self.subnets:
            if len(sn) < 2:
                raise DimensionMismatchError("a sub-network needs >= 2 layers")
            mats, last = sn[:-1], sn[-1]
            if last.ndim != 1:
                raise DimensionMismatchError("last layer must be a vector")
            for a, b in zip(mats[:-1], mats[1:]):
                if a.shape[1] != b.shape[0]:
                    raise DimensionMismatchError(
                        f"inner dims do not chain: {a.shape} -> {b.shape}")
            if mats[-1].shape[1] != last.shape[0]:
                raise DimensionMismatchError("output vector length mismatch")
            if _subnet_dims(sn) != ref:
                raise DimensionMismatchError("sub-networks must share dimensions")

    @property
    def K(self) -> int:
        return len(self.subnets)

    @property
    def depth(self) -> int:
        """Number of layers L (matrices plus the output vector)."""
        return len(self.subnets[0])

    @property
    def dims(self) -> tuple[int, ...]:
        return _subnet_dims(self.subnets[0])

    @property
    def input_dim(self) -> int:
        return self.subnets[0][0].shape[0]


def _subnet_dims(sn: Sequence[np.ndarray]) -> tuple[int, ...]:
    return tuple([sn[0].shape[0]] + [W.shape[1] for W in sn[:-1]] + [1])


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def make_net(subnets: Sequence[Sequence[np.ndarray]]) -> ParallelNet:
    return ParallelNet(tuple(tuple(np.asarray(W, dtype=float) for W in sn)
                             for sn in subnets))


def forward(net: ParallelNet, X: np.ndarray) -> np.ndarray:
    """Summed sub-network outputs; pure function of (net, X)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != net.input_dim:
        raise DimensionMismatchError(
            f"X has width {X.shape[1]}, net expects {net.input_dim}")
    out = np.zeros(X.shape[0])
    for sn in net.subnets:
        H = X
        for W in sn[:-1]:
            H = relu(H @ W)
        out += H @ sn[-1]
    return out


def _unit_path_norms_sq(sn: Sequence[np.ndarray]) -> np.ndarray:
    """Per-unit squared path norms through layer L-1.

    Entry j is the sum over all paths ending at unit j of the last hidden
    layer of ||w_{1 j_1}||^2 times the squared intermediate weights.
    """
    a = (np.asarray(sn[0]) ** 2).sum(axis=0)
    for W in sn[1:-1]:
        a = a @ (np.asarray(W) ** 2)
    return a


def path_regularizer(net: ParallelNet) -> float:
    """Sum over sub-networks of sqrt(sum over paths of squared products)."""
    total = 0.0
    for sn in net.subnets:
        a = _unit_path_norms_sq(sn)
        total += float(np.sqrt(a @ (np.asarray(sn[-1]) ** 2)))
    return total


def unit_path_norms(net: ParallelNet) -> list[np.ndarray]:
    """Per sub-network, the vector of per-unit path norms (sqrt of the sums)."""
    return [np.sqrt(_unit_path_norms_sq(sn)) for sn in net.subnets]


def rescale(net: ParallelNet) -> ParallelNet:
    """Rebalance weights so every live unit of the last hidden layer has unit
    path norm; the forward map is unchanged and the path regularizer of the
    input equals the sum of output-layer norms of the result.

    Units whose path norm is (numerically) zero carry no signal; their last
    hidden column and output weight are zeroed, which keeps layer shapes
    intact.  Sub-networks with no live units are dropped unless that would
    empty the net.
    """
    new_subnets = []
    for sn in net.subnets:
        r = np.sqrt(_unit_path_norms_sq(sn))
        live = r > DEAD_PATH_TOL
        if not np.any(live):
            continue
        scale_in = np.where(live, 1.0 / np.where(live, r, 1.0), 0.0)
        W_last = np.asarray(sn[-2]) * scale_in[None, :]
        w_out = np.where(live, np.asarray(sn[-1]) * r, 0.0)
        new_subnets.append(tuple(sn[:-2]) + (W_last, w_out))
    if not new_subnets:
        return net
    return ParallelNet(tuple(new_subnets))


def embed_standard(layers: Sequence[np.ndarray], K: int,
                   exact_sum: bool = False) -> ParallelNet:
    """Replicate a plain ReLU stack into K identical sub-networks.

    The parallel output is K times the stack's output; with exact_sum the
    output weights are divided by K so the sum reproduces the stack exactly.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    layers = [np.asarray(W, dtype=float) for W in layers]
    w_out = layers[-1] / K if exact_sum else layers[-1]
    sn = tuple(layers[:-1]) + (w_out,)
    return ParallelNet(tuple(sn for _ in range(K)))


def embed_resnet(W1: np.ndarray, W2: np.ndarray, W3: np.ndarray,
                 w4: np.ndarray) -> ParallelNet:
    """Two-sub-network construction whose forward equals
    relu(relu(relu(X W1) W2) W3) w4 + relu(X W3) w4 on nonnegative X.

    The skip branch routes X through two identity layers, so W1 and W2 must
    be square (d x d) for the sub-networks to share dimensions.  On inputs
    with negative entries the identity branch applies relu(X) first, so the
    identity with the residual expression can fail; callers own that
    assumption.
    """
    W1, W2, W3 = (np.asarray(A, dtype=float) for A in (W1, W2, W3))
    w4 = np.asarray(w4, dtype=float)
    d = W1.shape[0]
    if W1.shape != (d, d) or W2.shape != (d, d):
        raise DimensionMismatchError("W1 and W2 must be d x d for the skip branch")
    if W3.shape[0] != d or w4.shape[0] != W3.shape[1]:
        raise DimensionMismatchError("W3 / w4 shapes do not chain")
    eye = np.eye(d)
    return ParallelNet((
        (W1, W2, W3, w4),
        (eye, eye, W3, w4),
    ))


def weight_decay(net: ParallelNet) -> float:
    return float(sum((np.asarray(W) ** 2).sum() for sn in net.subnets for W in sn))


def objective_nonconvex(net: ParallelNet, X: np.ndarray, y: np.ndarray,
                        spec: TrainSpec) -> float:
    """loss(forward(net, X), y) + beta * regularizer per spec.reg."""
    yhat = forward(net, X)
    reg = path_regularizer(net) if spec.reg == "path" else weight_decay(net)
    return loss_value(spec.loss, yhat, np.asarray(y, dtype=float)) + spec.beta * reg


def net_to_json(net: ParallelNet) -> str:
    """Lossless f64 JSON round-trip: {L, K, dims, subnets: row-major matrices}."""
    doc = {
        "L": net.depth,
        "K": net.K,
        "dims": list(net.dims),
        "subnets": [[np.asarray(W).tolist() for W in sn] for sn in net.subnets],
    }
    return json.dumps(doc)


def net_from_json(s: str) -> ParallelNet:
    doc = json.loads(s)
    return make_net(doc["subnets"])
