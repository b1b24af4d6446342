"""Closed-form mapping from optimal convex variables to parallel-net weights.

Each block (i, l, s) on each side becomes one sub-network:

    W1 = (1 / m2) [I^s_1 z_(:,1), ..., I^s_m1 z_(:,m1)]   (sign-scaled columns)
    W2 = m1 x m2 matrix with constant rows I^s_j1
    w3 = +1 vector for the z side, -1 vector for the z' side.

On feasible variables the cone conditions make every relu linear, so the
summed forward output reproduces the program's fit exactly and the path
regularizer of the recovered net equals the scaled group norms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import convex_program as cp
from .convex_program import ConvexProgram, ConvexVariables
from .network import ParallelNet, forward, path_regularizer


class InfeasibleVariablesError(ValueError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass
class RecoveryReport:
    max_output_diff: float
    reg_cost_diff: float
    k_total: int


def decode_index(k: int, M: int, P1: int, P2: int) -> tuple[int, int, int]:
    """Map sub-network index k in [1, 2 M P1 P2] to 1-based (s, l, i).

    Within each half the layout is i fastest, then l, then s; the second
    half (the z' side) repeats it with k' = k - M P1 P2.
    """
    total = 2 * M * P1 * P2
    if not 1 <= k <= total:
        raise ValueError(f"k={k} out of range [1, {total}]")
    kk = k if k <= M * P1 * P2 else k - M * P1 * P2
    s = (kk - 1) // (P1 * P2) + 1
    l = (kk - 1 - (s - 1) * P1 * P2) // P1 + 1
    i = kk - (s - 1) * P1 * P2 - (l - 1) * P1
    return (s, l, i)


def recover_network(prog: ConvexProgram, vars: ConvexVariables,
                    prune_zero: bool = False,
                    feas_tol: float = 1e-6) -> ParallelNet:
    """Emit the 2 * S * P1 * P2 sub-networks of the closed-form construction.

    With sampled sign subsets the grid (and k_total) shrinks to the sampled
    patterns.  prune_zero drops sub-networks whose variable block is all
    zero; it is off by default so k_total matches the construction exactly.
    """
    resid = cp.penalty_total(prog, vars)
    if resid > feas_tol:
        raise InfeasibleVariablesError(
            f"constraint total {resid:.3e} exceeds tolerance {feas_tol:.1e}",
            residual=resid)
    M, P1, P2 = prog.S, prog.P1, prog.P2
    subnets = []
    for k in range(1, 2 * M * P1 * P2 + 1):
        s, l, i = decode_index(k, M, P1, P2)
        side = 0 if k <= M * P1 * P2 else 1
        block = vars.data[side, s - 1, l - 1, i - 1]          # (d, m1)
        if prune_zero and not np.any(block):
            continue
        signs = prog.sgn[s - 1]                                # (m1,)
        W1 = (block * signs[None, :]) / prog.m2
        W2 = np.tile(signs[:, None], (1, prog.m2))
        w3 = np.full(prog.m2, 1.0 if side == 0 else -1.0)
        subnets.append((W1, W2, w3))
    if not subnets:
        d, m1, m2 = prog.d, prog.m1, prog.m2
        subnets.append((np.zeros((d, m1)), np.zeros((m1, m2)), np.zeros(m2)))
    return ParallelNet(tuple(subnets))


def verify_equivalence(prog: ConvexProgram, vars: ConvexVariables,
                       net: ParallelNet, X: np.ndarray | None = None) -> RecoveryReport:
    """Output and regularization-cost discrepancies of a recovered net."""
    X = prog.X if X is None else np.asarray(X, dtype=float)
    out = forward(net, X)
    fit = cp.fit_value(prog, vars)
    reg_net = path_regularizer(net)
    reg_prog = (cp.group_norm(vars.z) + cp.group_norm(vars.zp)) / np.sqrt(prog.m2)
    return RecoveryReport(
        max_output_diff=float(np.max(np.abs(out - fit), initial=0.0)),
        reg_cost_diff=abs(reg_net - reg_prog),
        k_total=2 * prog.S * prog.P1 * prog.P2,
    )
