"""The finite convex program over paired block variables (z, z').

Variables are d x m1 blocks keyed by (i, l, s): first-layer pattern row i,
second-layer pattern l, sign pattern s.  Row i assigns one first-layer
pattern per unit through a tuple of indices into the first-layer set; the
default rows are the diagonal tuples (every unit of a block shares pattern
i), and sampled weight matrices supply joint rows whose units carry
distinct patterns, which is what makes arbitrary networks representable.

The fit of a variable pair is

    yhat = sum_{i,l,s,j1} D2_l D1_{i,j1} X (z[s,l,i,:,j1] - z'[s,l,i,:,j1]),

i.e. the effective data matrix holds the sign-free products D2 D1 X; the
per-unit signs enter the feasible cone and the weight recovery instead.  A
block is feasible when each sign-scaled column lies in the cone of its
unit's first-layer pattern and the summed first-layer response lies in the
cone of its second-layer pattern:

    (2 D1_{i,j1} - I) X (I^s_j1 z[s,l,i,:,j1]) >= 0   for every column j1,
    (2 D2_l - I) sum_j1 D1_{i,j1} X z[s,l,i,:,j1] >= 0.

The regularizer is the group Frobenius norm (sum of per-block Frobenius
norms) scaled by beta / sqrt(m2), and the one-sided relu penalty h converts
the constraints into an unconstrained objective.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .arrangements import ArrangementSet, SignPattern, pattern_of
from .losses import loss_value

DEFAULT_VAR_CAP = 2_000_000
DENSIFY_CAP = 400_000  # max dense X-tilde entries; densify is a debug path


class VariableBudgetError(RuntimeError):
    def __init__(self, message: str, count: int, cap: int):
        super().__init__(message)
        self.count = count
        self.cap = cap


class KeyMismatchError(ValueError):
    pass


def all_sign_patterns(m1: int) -> tuple[SignPattern, ...]:
    """All 2^m1 sign vectors; index 0 is all +1, the last is all -1."""
    out = []
    for idx in range(1 << m1):
        out.append(SignPattern(tuple(-1 if (idx >> j) & 1 else 1
                                     for j in range(m1))))
    return tuple(out)


def sample_sign_patterns(m1: int, count: int, seed: int | None = None) -> tuple[SignPattern, ...]:
    """Distinct sampled sign vectors, always containing all-(+1) and all-(-1).

    Keeping both extremes keeps the zero network representable on the z and
    z' sides alike.
    """
    full = all_sign_patterns(m1)
    if count >= len(full):
        return full
    rng = np.random.default_rng(seed)
    chosen = {0, (1 << m1) - 1}
    while len(chosen) < max(count, 2):
        chosen.add(int(rng.integers(0, 1 << m1)))
    return tuple(full[i] for i in sorted(chosen))


@dataclass(frozen=True)
class ConvexProgram:
    """Immutable program data; evaluations are pure functions of it."""

    X: np.ndarray
    y: np.ndarray
    first: ArrangementSet
    second: ArrangementSet
    signs: tuple[SignPattern, ...]
    m1: int
    m2: int
    beta: float
    loss: str = "squared"
    tuples: tuple[tuple[int, ...], ...] = ()   # per-row unit pattern indices

    # dense helper tensors, derived once in build()
    d1t: np.ndarray = field(repr=False, default=None)     # (n, T, m1) 0/1
    d2: np.ndarray = field(repr=False, default=None)      # (n, P2) 0/1
    sgn: np.ndarray = field(repr=False, default=None)     # (S, m1) +-1

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def P1(self) -> int:
        """Rows of the first-layer index (pattern tuples)."""
        return len(self.tuples)

    @property
    def P2(self) -> int:
        return len(self.second)

    @property
    def S(self) -> int:
        return len(self.signs)

    @property
    def tau(self) -> float:
        """Group-norm weight beta / sqrt(m2)."""
        return self.beta / np.sqrt(self.m2)

    @property
    def block_shape(self) -> tuple[int, int]:
        return (self.d, self.m1)

    @property
    def var_count(self) -> int:
        """Total scalars across both sides."""
        return 2 * self.d * self.m1 * self.S * self.P1 * self.P2

    def block_keys(self) -> Iterator[tuple[int, int, int]]:
        """(i, l, s) grid in the flat ordering (s outer, then l, then i)."""
        for s in range(self.S):
            for l in range(self.P2):
                for i in range(self.P1):
                    yield (i, l, s)

    def column_offset(self, i: int, l: int, s: int, j1: int) -> int:
        """Start of the d coords of column (i, j1, l, s) in the flat layout."""
        return (((s * self.P2 + l) * self.P1 + i) * self.m1 + j1) * self.d

    def meta_json(self) -> str:
        doc = {
            "n": self.n, "d": self.d, "m1": self.m1, "m2": self.m2,
            "beta": self.beta, "loss": self.loss,
            "P1": self.P1, "P2": self.P2, "S": self.S,
            "var_count": self.var_count,
            "first_source": self.first.source, "first_seed": self.first.seed,
            "second_source": self.second.source, "second_seed": self.second.seed,
            "tuples": [list(t) for t in self.tuples],
        }
        return json.dumps(doc)


@dataclass
class ConvexVariables:
    """Paired block vectors; data[0] is z, data[1] is z'.

    Layout: data[side, s, l, i, :, j1] is the d-vector of column j1 of block
    (i, l, s).  Serialization flattens in (side, s, l, i, j1, d) order.
    """

    data: np.ndarray  # (2, S, P2, P1, d, m1)

    @property
    def z(self) -> np.ndarray:
        return self.data[0]

    @property
    def zp(self) -> np.ndarray:
        return self.data[1]

    @classmethod
    def zeros(cls, prog: ConvexProgram) -> "ConvexVariables":
        return cls(np.zeros((2, prog.S, prog.P2, prog.P1, prog.d, prog.m1)))

    def copy(self) -> "ConvexVariables":
        return ConvexVariables(self.data.copy())

    def block(self, side: str, i: int, l: int, s: int) -> np.ndarray:
        idx = 0 if side == "z" else 1
        return self.data[idx, s, l, i]

    def matches(self, prog: ConvexProgram) -> bool:
        return self.data.shape == (2, prog.S, prog.P2, prog.P1, prog.d, prog.m1)

    def to_flat(self) -> np.ndarray:
        return np.ascontiguousarray(self.data.swapaxes(-1, -2)).ravel()

    @classmethod
    def from_flat(cls, flat: np.ndarray, prog: ConvexProgram) -> "ConvexVariables":
        shape = (2, prog.S, prog.P2, prog.P1, prog.m1, prog.d)
        return cls(np.asarray(flat, dtype=float).reshape(shape).swapaxes(-1, -2).copy())


def build(X: np.ndarray, y: np.ndarray, first: ArrangementSet,
          second: ArrangementSet, signs: tuple[SignPattern, ...], m1: int,
          m2: int, beta: float, loss: str = "squared",
          tuples: Sequence[Sequence[int]] | None = None,
          var_cap: int = DEFAULT_VAR_CAP) -> ConvexProgram:
    """Assemble the program; the effective matrix stays implicit.

    tuples lists the first-layer index rows (one pattern index per unit);
    None means the diagonal rows (one shared pattern per block, P1 rows).
    Raises VariableBudgetError when the scalar count exceeds var_cap.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be n x d with y of length n")
    if m1 < 1 or m2 < 1:
        raise ValueError("m1 and m2 must be >= 1")
    if beta <= 0:
        raise ValueError("beta must be positive")
    if len(first) == 0 or len(second) == 0:
        raise ValueError("arrangement sets must be nonempty")
    if first.n != X.shape[0] or second.n != X.shape[0]:
        raise ValueError("arrangement sets must match the data rows")
    if len({sp.signs for sp in signs}) != len(signs):
        raise ValueError("sign patterns must be distinct")
    if any(sp.m1 != m1 for sp in signs):
        raise ValueError("sign patterns must have length m1")
    if tuples is None:
        tuples = tuple((i,) * m1 for i in range(len(first)))
    else:
        tuples = tuple(tuple(int(j) for j in t) for t in tuples)
        if len(set(tuples)) != len(tuples):
            raise ValueError("tuple rows must be distinct")
        for t in tuples:
            if len(t) != m1 or not all(0 <= j < len(first) for j in t):
                raise ValueError("tuple entries must index the first-layer set")
    count = 2 * X.shape[1] * m1 * len(signs) * len(tuples) * len(second)
    if count > var_cap:
        raise VariableBudgetError(
            f"{count} scalar variables exceed the cap {var_cap}",
            count=count, cap=var_cap)
    sgn = np.stack([sp.as_array() for sp in signs], axis=0)
    masks = first.masks_matrix()                       # (n, |first|)
    idx = np.array(tuples, dtype=int)                  # (T, m1)
    d1t = masks[:, idx]                                # (n, T, m1)
    return ConvexProgram(X=X, y=y, first=first, second=second,
                         signs=tuple(signs), m1=m1, m2=m2, beta=float(beta),
                         loss=loss, tuples=tuples, d1t=d1t,
                         d2=second.masks_matrix(), sgn=sgn)


def sample_weight_tuples(X: np.ndarray, first: ArrangementSet, m1: int,
                         count: int, seed: int | None = None):
    """Joint pattern rows realized by random Gaussian weight matrices.

    Each draw is one d x m1 matrix whose columns' patterns form a row; any
    pattern not yet in `first` is appended (with its witness).  Returns the
    extended set and the distinct rows, diagonal rows included so blocks
    with a shared pattern stay available.
    """
    from .arrangements import union_sets

    rng = np.random.default_rng(seed)
    X = np.asarray(X, dtype=float)
    extra = {}
    rows = set()
    drawn = []
    for _ in range(count):
        W = rng.standard_normal((X.shape[1], m1))
        key = []
        for j in range(m1):
            p = pattern_of(X, W[:, j])
            extra.setdefault(p.mask, W[:, j] / max(np.linalg.norm(W[:, j]), 1e-30))
            key.append(p.mask)
        drawn.append(tuple(key))
    masks = {p.mask for p in first.patterns}
    new = [(m, w) for m, w in extra.items() if m not in masks]
    if new:
        ext = ArrangementSet(
            n=first.n,
            patterns=tuple(sorted([type(first.patterns[0])(m, first.n)
                                   for m, _ in new], key=lambda p: p.mask)),
            witnesses=tuple(w for _, w in sorted(new)),
            source="sampled", seed=seed)
        first = union_sets(first, ext)
    index = {p.mask: k for k, p in enumerate(first.patterns)}
    rows = {tuple((k,) * m1) for k in range(len(first))}
    for key in drawn:
        rows.add(tuple(index[m] for m in key))
    return first, tuple(sorted(rows))


def network_block_data(X: np.ndarray, net) -> list[dict]:
    """Per-subnet packing data for nets with one output unit per subnet.

    For each sub-network (W1, w2, w3 with m2 = 1) returns the unit pattern
    masks, the unit signs, the second-layer mask, and the scaled columns
    whose block reproduces the subnet output exactly.  Used to extend a
    program's pattern sets so given networks stay representable.
    """
    X = np.asarray(X, dtype=float)
    out = []
    for sn in net.subnets:
        W1, W2, w3 = sn
        if W2.shape[1] != 1:
            raise ValueError("packing data needs m2 = 1 sub-networks")
        w2 = W2[:, 0]
        w3s = float(w3[0])
        cols = np.abs(w2)[None, :] * W1                   # scaled unit columns
        unit_masks = [pattern_of(X, cols[:, j]).mask for j in range(W1.shape[1])]
        signs = tuple(1 if w2[j] >= 0 else -1 for j in range(W1.shape[1]))
        pre = np.maximum(X @ cols, 0.0) @ np.array(signs, dtype=float)
        from .arrangements import ActivationPattern

        second_mask = ActivationPattern.from_bits(pre > 0.0, n=X.shape[0]).mask
        out.append({"unit_masks": unit_masks, "signs": signs,
                    "second_mask": second_mask, "cols": cols, "w3": w3s})
    return out


def extend_with_networks(X, nets, first: ArrangementSet,
                         second: ArrangementSet,
                         tuples: Sequence[Sequence[int]]):
    """Extend pattern sets and tuple rows so every given m2 = 1 network is
    representable (and hence dominated) by the program built on them."""
    from .arrangements import ActivationPattern, ArrangementSet as AS, union_sets

    packs = [blk for net in nets for blk in network_block_data(X, net)]
    extra_first = {}
    extra_second = {}
    for blk in packs:
        for j, mask in enumerate(blk["unit_masks"]):
            col = blk["cols"][:, j]
            nrm = np.linalg.norm(col)
            extra_first.setdefault(mask, col / nrm if nrm > 0 else col)
        stacked = blk["cols"].T.ravel()
        extra_second.setdefault(blk["second_mask"], stacked)
    n = X.shape[0]

    def extend(base: ArrangementSet, extra: dict, width: int) -> ArrangementSet:
        have = {p.mask for p in base.patterns}
        new = sorted((m, w) for m, w in extra.items() if m not in have)
        if not new:
            return base
        ext = AS(n=n,
                 patterns=tuple(ActivationPattern(m, n) for m, _ in new),
                 witnesses=tuple(np.resize(np.asarray(w, dtype=float), width)
                                 for _, w in new),
                 source="sampled", seed=base.seed)
        return union_sets(base, ext)

    m1 = packs[0]["cols"].shape[1] if packs else 1
    first = extend(first, extra_first, X.shape[1])
    second = extend(second, extra_second, X.shape[1] * m1)
    index = {p.mask: k for k, p in enumerate(first.patterns)}
    rows = {tuple(t) for t in tuples}
    for blk in packs:
        rows.add(tuple(index[m] for m in blk["unit_masks"]))
    return first, second, tuple(sorted(rows))


def pack_networks(prog: ConvexProgram, nets) -> ConvexVariables:
    """Variables reproducing the summed outputs and path costs of m2 = 1
    networks whose patterns the program contains.

    Each sub-network lands in the block of its (tuple, second mask, signs)
    key on the side of its output weight's sign; collisions add, which can
    only lower the group cost below the summed path costs.
    """
    first_index = {p.mask: k for k, p in enumerate(prog.first.patterns)}
    tuple_index = {t: k for k, t in enumerate(prog.tuples)}
    second_index = {p.mask: k for k, p in enumerate(prog.second.patterns)}
    sign_index = {sp.signs: k for k, sp in enumerate(prog.signs)}
    vars = ConvexVariables.zeros(prog)
    for net in nets:
        for blk in network_block_data(prog.X, net):
            key = tuple(first_index[m] for m in blk["unit_masks"])
            t = tuple_index[key]
            l = second_index[blk["second_mask"]]
            s = sign_index[blk["signs"]]
            side = 0 if blk["w3"] >= 0 else 1
            scaled = blk["cols"] * np.asarray(blk["signs"])[None, :] * abs(blk["w3"])
            vars.data[side, s, l, t] += scaled
    return vars


def fit_value(prog: ConvexProgram, vars: ConvexVariables) -> np.ndarray:
    """X-tilde (z - z') without densifying: sum of D2 D1 X block columns."""
    if not vars.matches(prog):
        raise KeyMismatchError("variables do not match the program grid")
    u = (vars.z - vars.zp).sum(axis=0)                 # (P2, T, d, m1)
    XU = _xz(prog.X, u[None])[:, 0]                    # (n, P2, T, m1)
    masked = (XU * prog.d1t[:, None, :, :]).sum(axis=(2, 3))   # (n, P2)
    return (masked * prog.d2).sum(axis=1)


def fit_adjoint(prog: ConvexProgram, g: np.ndarray) -> np.ndarray:
    """Adjoint of the fit operator applied to g, as one (P2, T, d, m1) slab.

    The gradient of loss(fit, y) w.r.t. z[s, l, i, :, j1] is the slab entry
    [l, i, :, j1] for every s; w.r.t. z' it is its negative.
    """
    W = (prog.d2 * g[:, None])[:, :, None, None] * prog.d1t[:, None, :, :]
    return _xt_contract(W[:, None], prog.X)[0]         # (P2, T, d, m1)


def group_norm(side: np.ndarray) -> float:
    """Sum of per-block Frobenius norms over the (s, l, i) grid."""
    return float(np.sqrt((side ** 2).sum(axis=(-2, -1))).sum())


def block_norms(side: np.ndarray) -> np.ndarray:
    return np.sqrt((side ** 2).sum(axis=(-2, -1)))


@dataclass
class ConstraintReport:
    total: float
    per_block: dict


def _xz(X: np.ndarray, side: np.ndarray) -> np.ndarray:
    """(n, S, P2, T, m1) responses X @ columns, via one GEMM."""
    S, P2, T, d, m1 = side.shape
    M = np.moveaxis(side, 3, 4).reshape(-1, d) @ X.T
    return np.moveaxis(M.reshape(S, P2, T, m1, -1), -1, 0)


def _xt_contract(B: np.ndarray, X: np.ndarray) -> np.ndarray:
    """(S, P2, T, d, m1) adjoint X^T @ B over the sample axis, via one GEMM."""
    n = X.shape[0]
    S, P2, T, m1 = B.shape[1:]
    out = B.reshape(n, -1).T @ X
    return np.moveaxis(out.reshape(S, P2, T, m1, -1), -1, 3)


def _violations(prog: ConvexProgram, side: np.ndarray):
    """Per-block first and second layer violation sums for one side."""
    XZ = _xz(prog.X, side)                            # (n, S, P2, T, m1)
    sgn1 = 2.0 * prog.d1t - 1.0                       # (n, T, m1)
    sgn2 = 2.0 * prog.d2 - 1.0                        # (n, P2)
    # first layer: sign-scaled columns must sit in their unit pattern's cone
    v1 = sgn1[:, None, None, :, :] * prog.sgn[None, :, None, None, :] * XZ
    viol1 = np.maximum(-v1, 0.0).sum(axis=(0, 4))     # (S, P2, T)
    # second layer: summed masked responses must sit in the D2 cone
    y2 = (prog.d1t[:, None, None, :, :] * XZ).sum(axis=4)   # (n, S, P2, T)
    v2 = sgn2[:, None, :, None] * y2
    viol2 = np.maximum(-v2, 0.0).sum(axis=0)          # (S, P2, T)
    return viol1, viol2


def penalty_total(prog: ConvexProgram, vars: ConvexVariables) -> float:
    """Sum of all constraint violations over both sides (the value of h)."""
    total = 0.0
    for side in (vars.z, vars.zp):
        viol1, viol2 = _violations(prog, side)
        total += float(viol1.sum() + viol2.sum())
    return total


def penalty_value_grad(prog: ConvexProgram, side: np.ndarray):
    """Value and subgradient of the relu penalty for one side.

    The subgradient of relu at the kink is taken to be 0 (strict-positivity
    masks below).
    """
    XZ = _xz(prog.X, side)
    sgn1 = 2.0 * prog.d1t - 1.0
    sgn2 = 2.0 * prog.d2 - 1.0
    scale1 = sgn1[:, None, None, :, :] * prog.sgn[None, :, None, None, :]
    v1 = scale1 * XZ
    act1 = ((-v1) > 0.0) * scale1
    val = float(np.maximum(-v1, 0.0).sum())
    g1 = -_xt_contract(act1, prog.X)
    y2 = (prog.d1t[:, None, None, :, :] * XZ).sum(axis=4)
    v2 = sgn2[:, None, :, None] * y2
    act2 = ((-v2) > 0.0) * sgn2[:, None, :, None]
    val += float(np.maximum(-v2, 0.0).sum())
    E2 = act2[:, :, :, :, None] * prog.d1t[:, None, None, :, :]
    g2 = -_xt_contract(E2, prog.X)
    return val, g1 + g2


def penalty_squared_value(prog: ConvexProgram, side: np.ndarray) -> float:
    """Value of the squared-hinge penalty for one side (no gradient work)."""
    XZ = _xz(prog.X, side)
    sgn1 = 2.0 * prog.d1t - 1.0
    sgn2 = 2.0 * prog.d2 - 1.0
    scale1 = sgn1[:, None, None, :, :] * prog.sgn[None, :, None, None, :]
    r1 = np.maximum(-scale1 * XZ, 0.0)
    val = float((r1 ** 2).sum())
    y2 = (prog.d1t[:, None, None, :, :] * XZ).sum(axis=4)
    r2 = np.maximum(-sgn2[:, None, :, None] * y2, 0.0)
    return val + float((r2 ** 2).sum())


def penalty_squared_value_grad(prog: ConvexProgram, side: np.ndarray):
    """Squared-hinge variant sum(relu(violation)^2): smooth surrogate whose
    gradient is Lipschitz, used inside the solver; the reported residual
    stays the plain relu sum."""
    XZ = _xz(prog.X, side)
    sgn1 = 2.0 * prog.d1t - 1.0
    sgn2 = 2.0 * prog.d2 - 1.0
    scale1 = sgn1[:, None, None, :, :] * prog.sgn[None, :, None, None, :]
    r1 = np.maximum(-scale1 * XZ, 0.0)
    val = float((r1 ** 2).sum())
    g1 = -2.0 * _xt_contract(r1 * scale1, prog.X)
    y2 = (prog.d1t[:, None, None, :, :] * XZ).sum(axis=4)
    v2 = sgn2[:, None, :, None] * y2
    r2 = np.maximum(-v2, 0.0)
    val += float((r2 ** 2).sum())
    E2 = (r2 * sgn2[:, None, :, None])[:, :, :, :, None] * \
        prog.d1t[:, None, None, :, :]
    g2 = -2.0 * _xt_contract(E2, prog.X)
    return val, g1 + g2


def constraint_residuals(prog: ConvexProgram, vars: ConvexVariables) -> ConstraintReport:
    """Total violation and a per-(side, i, l, s) block map; zero iff feasible."""
    if not vars.matches(prog):
        raise KeyMismatchError("variables do not match the program grid")
    per_block = {}
    total = 0.0
    for name, side in (("z", vars.z), ("zp", vars.zp)):
        viol1, viol2 = _violations(prog, side)
        both = viol1 + viol2                           # (S, P2, T)
        total += float(both.sum())
        for (i, l, s) in prog.block_keys():
            per_block[(name, i, l, s)] = float(both[s, l, i])
    return ConstraintReport(total=total, per_block=per_block)


def objective(prog: ConvexProgram, vars: ConvexVariables, lam: float = 0.0) -> float:
    """loss + (beta / sqrt(m2)) * group norms + lam * constraint violations."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    val = loss_value(prog.loss, fit_value(prog, vars), prog.y)
    val += prog.tau * (group_norm(vars.z) + group_norm(vars.zp))
    if lam > 0:
        val += lam * penalty_total(prog, vars)
    return val


def densify(prog: ConvexProgram) -> np.ndarray:
    """Dense effective matrix for one side, columns in (s, l, i, j1, d) order.

    Debug helper: the column count is d * m1 * S * P1 * P2 and explodes
    quickly, so a hard cap guards against accidental use at scale.
    """
    cols = prog.var_count // 2
    if prog.n * cols > DENSIFY_CAP:
        raise VariableBudgetError("dense X-tilde too large; use fit_value",
                                  count=prog.n * cols, cap=DENSIFY_CAP)
    out = np.zeros((prog.n, cols))
    for s in range(prog.S):
        for l in range(prog.P2):
            for i in range(prog.P1):
                for j1 in range(prog.m1):
                    base = prog.d2[:, l, None] * prog.d1t[:, i, j1, None] * prog.X
                    off = prog.column_offset(i, l, s, j1)
                    out[:, off:off + prog.d] = base
    return out


def block_cone_matrix(prog: ConvexProgram, s: int, l: int, i: int) -> np.ndarray:
    """Rows G with {flattened block c : G c >= 0} == the block's feasible cone.

    Columns are the block's m1 columns stacked (j-major).  Rows are
    unit-normalized with zero and duplicate rows dropped (the cone is
    unchanged and the dual NNLS is far better conditioned).  Matrices are
    cached on the program, which is immutable.
    """
    cache = getattr(prog, "_cone_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(prog, "_cone_cache", cache)
    key = (s, l, i)
    if key not in cache:
        n, d, m1 = prog.n, prog.d, prog.m1
        sgn1 = 2.0 * prog.d1t - 1.0
        sgn2 = 2.0 * prog.d2 - 1.0
        G = np.zeros((n * m1 + n, d * m1))
        for j1 in range(m1):
            rows = slice(j1 * n, (j1 + 1) * n)
            cols = slice(j1 * d, (j1 + 1) * d)
            G[rows, cols] = prog.sgn[s, j1] * sgn1[:, i, j1, None] * prog.X
            G[n * m1:, cols] = sgn2[:, l, None] * (prog.d1t[:, i, j1, None] * prog.X)
        norms = np.linalg.norm(G, axis=1)
        G = G[norms > 0] / norms[norms > 0, None]
        if G.shape[0]:
            G = np.unique(np.round(G, 14), axis=0)
        L = float(np.linalg.norm(G @ G.T, 2)) if G.shape[0] else 1.0
        cache[key] = (G, L)
    return cache[key][0]


def _cone_data(prog: ConvexProgram, s: int, l: int, i: int):
    """(G, ||G G'||_2) for one block, both cached."""
    block_cone_matrix(prog, s, l, i)
    return getattr(prog, "_cone_cache")[(s, l, i)]


def cone_project_dual(G: np.ndarray, c: np.ndarray, mu0=None,
                      tol: float = 1e-11, refine_iters: int = 2000,
                      L: float | None = None):
    """Projection of c onto {w : G w >= 0} plus the dual multiplier found.

    Nonnegative least squares on the dual side; when the NNLS multiplier
    misses the KKT conditions (degenerate cones), an accelerated projected
    gradient pass on the dual polishes it.  A zero dual residual means c
    lies in the polar cone, where the projection is exactly zero (computing
    c + G' mu there would cancel catastrophically).  mu0 warm-starts the
    dual and typically skips the NNLS entirely.
    """
    from scipy.optimize import nnls

    if G.shape[0] == 0 or np.all(G @ c >= 0.0):
        return c, mu0
    cn = max(1.0, float(np.linalg.norm(c)))
    if mu0 is not None:
        mu = mu0
        p = c + G.T @ mu
    else:
        mu, rnorm = nnls(G.T, -c)
        if rnorm <= 1e-12 * cn:
            return np.zeros_like(c), mu
        p = c + G.T @ mu
        if not np.all(np.isfinite(p)) or \
                abs(float(np.linalg.norm(p)) - rnorm) > 1e-6 * cn:
            mu = np.zeros(G.shape[0])  # cancellation: restart the dual at zero
            p = c.copy()
    scale = tol * cn

    def kkt_ok(mu_, Gp):
        # projection needs feasibility AND complementary slackness
        return float(Gp.min()) >= -scale and \
            abs(float(mu_ @ Gp)) <= scale * (1.0 + float(np.abs(mu_).sum()))

    Gp = G @ p
    if not kkt_ok(mu, Gp):
        if L is None:
            L = float(np.linalg.norm(G @ G.T, 2))
        t_prev, mu_prev, w = 1.0, mu.copy(), mu.copy()
        for _ in range(refine_iters):
            grad = G @ (G.T @ w + c)
            mu_new = np.maximum(0.0, w - grad / L)
            t = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_prev * t_prev))
            w = mu_new + ((t_prev - 1.0) / t) * (mu_new - mu_prev)
            mu_prev, t_prev = mu_new, t
            p = c + G.T @ mu_new
            if kkt_ok(mu_new, G @ p):
                break
        mu = mu_new
    return p, mu


def cone_project(G: np.ndarray, c: np.ndarray, tol: float = 1e-11,
                 refine_iters: int = 2000) -> np.ndarray:
    """Euclidean projection of c onto the polyhedral cone {w : G w >= 0}."""
    p, _ = cone_project_dual(G, c, tol=tol, refine_iters=refine_iters)
    return p


def cone_max_norm(G: np.ndarray, c: np.ndarray, refine_iters: int = 400,
                  L: float | None = None, floor: float = 0.0) -> float:
    """Valid upper bound on max of <c, w> over the unit ball of {G w >= 0},
    which equals ||projection of c onto the cone||.

    Every nonnegative dual multiplier mu yields the bound ||c + G' mu||, so
    the returned minimum over tried multipliers can only overestimate the
    true value; certificates built on it stay valid even unconverged.  The
    refinement stops once the bound drops below `floor` (callers taking a
    max over blocks cannot be affected below it) or stagnates.
    """
    from scipy.optimize import nnls

    if G.shape[0] == 0 or np.all(G @ c >= 0.0):
        return float(np.linalg.norm(c))
    best = float(np.linalg.norm(c))  # mu = 0
    if best <= floor:
        return best
    mu, rnorm = nnls(G.T, -c)
    best = min(best, float(rnorm))
    if best <= max(floor, 1e-14):
        return best
    if not np.all(np.isfinite(mu)) or np.linalg.norm(mu) > 1e10 * best:
        mu = np.zeros(G.shape[0])
    if L is None:
        L = float(np.linalg.norm(G @ G.T, 2))
    t_prev, mu_prev, w = 1.0, mu.copy(), mu.copy()
    stale = 0
    for _ in range(refine_iters):
        grad = G @ (G.T @ w + c)
        mu_new = np.maximum(0.0, w - grad / L)
        t = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_prev * t_prev))
        w = mu_new + ((t_prev - 1.0) / t) * (mu_new - mu_prev)
        mu_prev, t_prev = mu_new, t
        val = float(np.linalg.norm(c + G.T @ mu_new))
        stale = stale + 1 if val > best - 1e-12 * (1.0 + best) else 0
        best = min(best, val)
        if best <= floor or stale >= 25:
            break
    return best


def project_block_cone(prog: ConvexProgram, s: int, l: int, i: int,
                       block: np.ndarray, tol: float = 1e-11) -> np.ndarray:
    """Projection of one d x m1 block onto its feasible cone."""
    G, L = _cone_data(prog, s, l, i)
    p, _ = cone_project_dual(G, block.T.ravel(), tol=tol, L=L)
    return p.reshape(prog.m1, prog.d).T


def project_feasible(prog: ConvexProgram, vars: ConvexVariables) -> ConvexVariables:
    """Blockwise projection onto the feasible cones; polishes solver output
    to exact feasibility."""
    out = vars.copy()
    for s in range(prog.S):
        for l in range(prog.P2):
            for i in range(prog.P1):
                for side in (0, 1):
                    out.data[side, s, l, i] = project_block_cone(
                        prog, s, l, i, out.data[side, s, l, i])
    return out
