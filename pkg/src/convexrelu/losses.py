"""Convex losses shared by the network objective, the convex solver, and the
SGD baseline.

Conventions (fixed once, here):
  * squared:  0.5 * sum((yhat - y)^2).  The 0.5 factor makes the optimal dual
    variable equal to yhat - y.
  * l2:       euclidean norm ||yhat - y||_2 (not squared), 1-Lipschitz.
  * logistic: sum(log(1 + exp(-y * yhat))) for labels in {-1, +1}.
  * hinge:    sum(max(0, 1 - y * yhat)) for labels in {-1, +1}.
"""

from __future__ import annotations

import numpy as np

SUPPORTED = ("squared", "l2", "logistic", "hinge")

# losses whose gradient is Lipschitz (safe for monotone backtracking asserts)
SMOOTH = ("squared", "logistic")


class UnsupportedLossError(ValueError):
    pass


def _check(name: str) -> None:
    if name not in SUPPORTED:
        raise UnsupportedLossError(f"unknown loss {name!r}; supported: {SUPPORTED}")


def loss_value(name: str, yhat: np.ndarray, y: np.ndarray) -> float:
    _check(name)
    r = yhat - y
    if name == "squared":
        return 0.5 * float(r @ r)
    if name == "l2":
        return float(np.linalg.norm(r))
    if name == "logistic":
        return float(np.logaddexp(0.0, -y * yhat).sum())
    margin = 1.0 - y * yhat
    return float(np.maximum(margin, 0.0).sum())


def loss_grad(name: str, yhat: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(Sub)gradient of the loss with respect to yhat."""
    _check(name)
    r = yhat - y
    if name == "squared":
        return r
    if name == "l2":
        nrm = np.linalg.norm(r)
        return r / nrm if nrm > 0.0 else np.zeros_like(r)
    if name == "logistic":
        return -y / (1.0 + np.exp(y * yhat))
    active = (1.0 - y * yhat) > 0.0
    return -y * active


def conjugate(name: str, v: np.ndarray, y: np.ndarray, tol: float = 1e-9) -> float:
    """Fenchel conjugate L*(v) = sup_z <z, v> - L(z, y).

    Closed forms exist for the losses used by the duality certificate;
    others raise.
    """
    _check(name)
    if name == "squared":
        return float(y @ v + 0.5 * (v @ v))
    if name == "l2":
        if np.linalg.norm(v) > 1.0 + tol:
            return np.inf
        return float(y @ v)
    raise UnsupportedLossError(f"no closed-form conjugate for loss {name!r}")
