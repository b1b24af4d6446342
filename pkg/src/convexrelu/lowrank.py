"""Rank-truncated training support: truncated SVD, the approximation-factor
formula, rank selection, and transfer evaluation.

Training on the best rank-r approximation of X multiplies the optimal
objective by at most (1 + sqrt(m1 m2) R sigma_{r+1} / beta)^2 for an
R-Lipschitz loss; the euclidean-norm loss has R = 1.  The squared loss is
not globally Lipschitz, so sandwich assertions here are run with the
euclidean-norm loss and squared-loss factors are informational.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .losses import loss_value
from .network import ParallelNet, forward, path_regularizer


@dataclass
class LowRankReport:
    sigma: list[float]
    r: int
    factor: float
    p_hat: float | None = None
    p_r: float | None = None
    p_star: float | None = None

    def __post_init__(self):
        s = np.asarray(self.sigma)
        if np.any(s < -1e-12) or np.any(np.diff(s) > 1e-9 * (1 + s[0] if len(s) else 1)):
            raise ValueError("singular values must be nonnegative and nonincreasing")
        if self.factor < 1.0 - 1e-12:
            raise ValueError("bound factor is always >= 1")

    def to_json(self) -> str:
        return json.dumps({
            "sigma": list(map(float, self.sigma)),
            "r": self.r,
            "factor": self.factor,
            "p_hat": self.p_hat,
            "p_r": self.p_r,
            "p_star": self.p_star,
        })


def truncate(X: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Best rank-r approximation in spectral norm plus the full spectrum.

    The spectral error ||X - Xr||_2 equals sigma_{r+1} (0 at full rank).
    """
    X = np.asarray(X, dtype=float)
    k = min(X.shape)
    if not 1 <= r <= k:
        raise ValueError(f"rank r={r} out of range [1, {k}]")
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    Xr = (U[:, :r] * s[:r]) @ Vt[:r]
    return Xr, s


def bound_factor(beta: float, m1: int, m2: int, R: float, sigma_next: float) -> float:
    """(1 + sqrt(m1 m2) R sigma_{r+1} / beta)^2."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if min(m1, m2) < 1 or R < 0 or sigma_next < 0:
        raise ValueError("m1, m2 >= 1 and R, sigma_next >= 0 required")
    return float((1.0 + np.sqrt(m1 * m2) * R * sigma_next / beta) ** 2)


def choose_rank(sigma, eps: float, beta: float, m1: int, m2: int, R: float) -> int:
    """Smallest r whose factor at sigma_{r+1} is within 1 + eps; full rank if none."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    sigma = np.asarray(sigma, dtype=float)
    k = len(sigma)
    for r in range(1, k):
        if bound_factor(beta, m1, m2, R, float(sigma[r])) <= 1.0 + eps:
            return r
    return k


def transfer_objective(net_hat: ParallelNet, X: np.ndarray, y: np.ndarray,
                       beta: float, loss: str = "l2") -> float:
    """Objective of truncated-trained weights evaluated on other data."""
    yhat = forward(net_hat, X)
    return loss_value(loss, yhat, np.asarray(y, dtype=float)) + \
        beta * path_regularizer(net_hat)


def spectrum_to_csv(sigma, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "sigma"])
        for k, s in enumerate(sigma, start=1):
            writer.writerow([k, float(s)])
