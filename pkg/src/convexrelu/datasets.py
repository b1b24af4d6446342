"""Dataset generators and CSV ingestion for the experiment harness.

All generators are bit-reproducible per seed.  The spiral is a two-arm
Archimedean spiral: arm a in {0, 1} carries label (-1)^a, and point t in
[0, 1] of an arm sits at radius 0.2 + 0.8 t and angle pi a + 3 pi t, plus
isotropic Gaussian noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .baseline import init_net
from .network import ParallelNet, forward


class IngestError(ValueError):
    pass


def gen_spiral(n: int, noise: float = 0.0, seed: int = 0):
    """Two interleaved spiral arms in the plane with labels +-1."""
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    X = np.zeros((n, 2))
    y = np.zeros(n)
    sizes = (n - n // 2, n // 2)
    row = 0
    for arm, m in enumerate(sizes):
        t = np.linspace(0.0, 1.0, m)
        radius = 0.2 + 0.8 * t
        angle = np.pi * arm + 3.0 * np.pi * t
        pts = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
        pts += noise * rng.standard_normal(pts.shape)
        X[row:row + m] = pts
        y[row:row + m] = 1.0 if arm == 0 else -1.0
        row += m
    return X, y


def gen_teacher(n: int, d: int, K: int, m1: int, m2: int, noise: float = 0.1,
                seed: int = 0):
    """Labels from a random parallel net on Gaussian inputs plus noise.

    Returns (X, y, teacher) so experiments can report against the source.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    teacher = _standard_normal_net(d, m1, m2, K, rng)
    y = forward(teacher, X) + noise * rng.standard_normal(n)
    return X, y, teacher


def _standard_normal_net(d, m1, m2, K, rng) -> ParallelNet:
    from .network import make_net

    subnets = []
    for _ in range(K):
        subnets.append((rng.standard_normal((d, m1)),
                        rng.standard_normal((m1, m2)),
                        rng.standard_normal(m2)))
    return make_net(subnets)


def gen_lowrank(n: int, d: int, r: int, seed: int = 0, K: int = 5,
                teacher_m1: int = 1, teacher_m2: int = 1, noise: float = 0.1):
    """Gaussian matrix with the tail singular values flattened to 1.

    After sampling, sigma_{r+1} = ... = sigma_d = 1 exactly (the leading r
    singular values are left as sampled).  Labels come from a random
    K-sub-network teacher on the surgered matrix, plus noise.
    """
    if not 1 <= r <= min(n, d):
        raise ValueError("require 1 <= r <= min(n, d)")
    rng = np.random.default_rng(seed)
    X0 = rng.standard_normal((n, d))
    U, s, Vt = np.linalg.svd(X0, full_matrices=False)
    s = s.copy()
    s[r:] = 1.0
    X = (U * s) @ Vt
    teacher = _standard_normal_net(d, teacher_m1, teacher_m2, K, rng)
    y = forward(teacher, X) + noise * rng.standard_normal(n)
    return X, y, teacher


def load_csv(path: str, label_column: str | int = -1,
             standardize: bool = False):
    """Features and labels from a CSV file; header row optional.

    The label column may be named (requires a header) or indexed; negative
    indices count from the right.  Parse failures report row and column.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise IngestError(f"{path}: no data rows")
    header = None
    try:
        [float(cell) for cell in rows[0]]
    except ValueError:
        header = [cell.strip() for cell in rows[0]]
        rows = rows[1:]
        if not rows:
            raise IngestError(f"{path}: header but no data rows")
    width = len(rows[0])
    if isinstance(label_column, str):
        if header is None:
            raise IngestError(f"{path}: label column {label_column!r} needs a header")
        try:
            label_idx = header.index(label_column)
        except ValueError:
            raise IngestError(f"{path}: no column named {label_column!r}")
    else:
        label_idx = label_column % width
    data = np.zeros((len(rows), width))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise IngestError(f"{path}: row {i + 1} has {len(r)} cells, expected {width}")
        for j, cell in enumerate(r):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise IngestError(
                    f"{path}: row {i + 1}, column {j + 1}: cannot parse {cell!r}")
    y = data[:, label_idx]
    X = np.delete(data, label_idx, axis=1)
    if standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        X = (X - mu) / sd
    return X, y
