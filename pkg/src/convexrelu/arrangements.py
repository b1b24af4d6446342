"""Hyperplane arrangement patterns for the two ReLU layers.

An activation pattern is the 0/1 diagonal matrix D that linearizes a ReLU on
one side of a set of hyperplanes: relu(X w) = D X w whenever
(2 D - I) X w >= 0.  This module enumerates (exactly via incremental LP
feasibility, or approximately via random directions) the patterns realizable
on a data matrix, together with witness directions, and evaluates the
combinatorial upper bounds on their count.

Second-layer patterns are arrangements of stacked matrices
[s_1 D_1 X, ..., s_m D_m X] ranging over per-unit choices of a first-layer
pattern D_j and a sign s_j in {-1, +1}.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

# Strict margin used by the LP feasibility check: cones are accepted only if
# some unit direction clears every hyperplane by at least this much.
LP_MARGIN = 1e-9

# Relative tolerance below which a projection x_i @ w counts as a tie and the
# sampled direction is retried.
TIE_RTOL = 1e-12

DEFAULT_BUDGET = 20_000


class BudgetExceededError(RuntimeError):
    """Raised when enumeration would produce more patterns than allowed."""

    def __init__(self, message: str, count: int, budget: int):
        super().__init__(message)
        self.count = count
        self.budget = budget


class EmptyArrangementError(ValueError):
    """Raised when a second-layer enumeration receives no first-layer patterns."""


@dataclass(frozen=True)
class ActivationPattern:
    """Bitmask over the n data rows; bit i set means D_ii = 1."""

    mask: int
    n: int

    def __post_init__(self):
        if self.n < 0 or self.mask < 0 or self.mask >> self.n:
            raise ValueError(f"mask {self.mask} does not fit in {self.n} bits")

    def bits(self) -> np.ndarray:
        """0/1 float vector of length n (the diagonal of D)."""
        return np.array([(self.mask >> i) & 1 for i in range(self.n)], dtype=float)

    def complement(self) -> "ActivationPattern":
        return ActivationPattern(((1 << self.n) - 1) ^ self.mask, self.n)

    @classmethod
    def from_bits(cls, bits: Iterable[bool | int], n: int | None = None) -> "ActivationPattern":
        bits = list(bits)
        mask = 0
        for i, b in enumerate(bits):
            if b:
                mask |= 1 << i
        return cls(mask, n if n is not None else len(bits))

    def to_hex(self) -> str:
        return format(self.mask, "x")

    @classmethod
    def from_hex(cls, s: str, n: int) -> "ActivationPattern":
        return cls(int(s, 16), n)


@dataclass(frozen=True)
class SignPattern:
    """Per-unit sign vector absorbing the sign of second-layer weights."""

    signs: tuple[int, ...]

    def __post_init__(self):
        if not all(s in (-1, 1) for s in self.signs):
            raise ValueError("sign entries must be +1 or -1")

    @property
    def m1(self) -> int:
        return len(self.signs)

    def as_array(self) -> np.ndarray:
        return np.array(self.signs, dtype=float)


@dataclass(frozen=True)
class ArrangementSet:
    """Deterministically ordered set of distinct activation patterns.

    Patterns are sorted ascending by mask value so that two runs over the
    same inputs build identical convex programs.  Witnesses are directions
    realizing each pattern (the zero direction for the always-present
    all-zeros pattern).
    """

    n: int
    patterns: tuple[ActivationPattern, ...]
    witnesses: tuple[np.ndarray, ...]
    source: str  # "exact" or "sampled"
    seed: int | None = None
    count: int | None = None
    degenerate: bool = False

    def __post_init__(self):
        masks = [p.mask for p in self.patterns]
        if len(set(masks)) != len(masks):
            raise ValueError("patterns must be distinct")
        if masks != sorted(masks):
            raise ValueError("patterns must be sorted by mask")
        if len(self.witnesses) != len(self.patterns):
            raise ValueError("one witness per pattern required")

    def __len__(self) -> int:
        return len(self.patterns)

    def masks_matrix(self) -> np.ndarray:
        """(n, P) matrix whose column p is the diagonal of pattern p."""
        if not self.patterns:
            return np.zeros((self.n, 0))
        return np.stack([p.bits() for p in self.patterns], axis=1)

    def to_json(self) -> str:
        doc = {
            "n": self.n,
            "source": self.source,
            "patterns": [p.to_hex() for p in self.patterns],
            "witnesses": [list(map(float, w)) for w in self.witnesses],
        }
        if self.seed is not None:
            doc["seed"] = self.seed
        if self.count is not None:
            doc["count"] = self.count
        if self.degenerate:
            doc["degenerate"] = True
        return json.dumps(doc)

    @classmethod
    def from_json(cls, s: str) -> "ArrangementSet":
        doc = json.loads(s)
        n = doc["n"]
        return cls(
            n=n,
            patterns=tuple(ActivationPattern.from_hex(h, n) for h in doc["patterns"]),
            witnesses=tuple(np.asarray(w, dtype=float) for w in doc["witnesses"]),
            source=doc["source"],
            seed=doc.get("seed"),
            count=doc.get("count"),
            degenerate=doc.get("degenerate", False),
        )


def pattern_of(X: np.ndarray, w: np.ndarray) -> ActivationPattern:
    """Pattern realized by direction w: bit i set iff x_i @ w > 0.

    Ties (exact zeros) map to inactive bits, so relu(X w) = D X w holds either
    way and the all-zeros matrix yields the all-zeros pattern.
    """
    z = np.asarray(X) @ np.asarray(w)
    return ActivationPattern.from_bits(z > 0.0, n=X.shape[0])


def verify_cone(X: np.ndarray, w: np.ndarray, pattern: ActivationPattern,
                tol: float = 1e-12) -> bool:
    """True iff (2D - I) X w >= -tol componentwise."""
    z = np.asarray(X) @ np.asarray(w)
    s = 2.0 * pattern.bits() - 1.0
    return bool(np.all(s * z >= -tol))


def _strict_witness(X: np.ndarray, bits: Sequence[int],
                    margin: float = LP_MARGIN) -> np.ndarray | None:
    """Direction with sign_i * (x_i @ w) >= margin on unit-normalized rows,
    or None when no such direction exists.

    The LP maximizes the worst margin t over the box ||w||_inf <= 1 (rows are
    normalized first, so t is scale-free); the pattern is accepted only when
    the best achievable margin clears the threshold.  Zero rows require bit 0
    and impose no constraint.  The witness is returned with unit euclidean
    norm.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    rows = []
    for i, b in enumerate(bits):
        nrm = np.linalg.norm(X[i])
        if nrm == 0.0:
            if b:
                return None  # a zero row can never be strictly active
            continue
        s = 1.0 if b else -1.0
        rows.append(-s * X[i] / nrm)
    if not rows:
        return np.zeros(d)
    A = np.array(rows)
    # variables (w, t): maximize t subject to sign_i x_i @ w - t >= 0
    A_ub = np.hstack([A, np.ones((A.shape[0], 1))])
    b_ub = np.zeros(A.shape[0])
    c = np.zeros(d + 1)
    c[-1] = -1.0
    bounds = [(-1.0, 1.0)] * d + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0 or res.x is None or res.x[-1] < margin:
        return None
    w = res.x[:d]
    nrm = np.linalg.norm(w)
    if nrm == 0.0:
        return None
    w = w / nrm
    if np.any(A @ w >= 0.0):  # a-posteriori strictness check
        return None
    return w


def _sorted_set(found: dict[int, np.ndarray], n: int, d_w: int, source: str,
                seed: int | None = None, count: int | None = None,
                degenerate: bool = False) -> ArrangementSet:
    if 0 not in found:
        found[0] = np.zeros(d_w)
    masks = sorted(found)
    return ArrangementSet(
        n=n,
        patterns=tuple(ActivationPattern(m, n) for m in masks),
        witnesses=tuple(found[m] for m in masks),
        source=source,
        seed=seed,
        count=count,
        degenerate=degenerate,
    )


def _enumerate_exact(X: np.ndarray, budget: int) -> dict[int, np.ndarray]:
    """All patterns realizable with a strict margin, via row-by-row extension.

    Each surviving prefix is a feasible conjunction of strict half-space
    constraints; extending a prefix by the next row keeps it only if the LP
    stays feasible.  Output-sensitive: the work is O(#patterns * n) LPs.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    prefixes: list[list[int]] = [[]]
    for i in range(n):
        fresh: list[list[int]] = []
        zero_row = not np.any(X[i])
        for p in prefixes:
            if zero_row:
                fresh.append(p + [0])
                continue
            for b in (0, 1):
                cand = p + [b]
                if _strict_witness(X[: i + 1], cand) is not None:
                    fresh.append(cand)
        if len(fresh) > budget:
            raise BudgetExceededError(
                f"exact enumeration exceeded {budget} patterns at row {i + 1}",
                count=len(fresh), budget=budget)
        prefixes = fresh
    found: dict[int, np.ndarray] = {}
    for bits in prefixes:
        w = _strict_witness(X, bits)
        if w is None:
            continue
        found[ActivationPattern.from_bits(bits).mask] = w
    return found


def _sampled_direction(X: np.ndarray, rng: np.random.Generator,
                       max_retries: int = 64) -> np.ndarray:
    """Gaussian direction in general position (retries on near-ties)."""
    n, d = X.shape
    row_norms = np.linalg.norm(X, axis=1)
    nonzero = row_norms > 0.0
    for _ in range(max_retries):
        w = rng.standard_normal(d)
        z = X @ w
        thresh = TIE_RTOL * row_norms * np.linalg.norm(w)
        if np.all(np.abs(z[nonzero]) > thresh[nonzero]):
            return w / np.linalg.norm(w)
    return w / np.linalg.norm(w)


def enumerate_first_layer(X: np.ndarray, mode: str = "exact",
                          count: int | None = None, seed: int | None = None,
                          budget: int = DEFAULT_BUDGET) -> ArrangementSet:
    """Patterns of the first ReLU layer on X.

    mode="exact": every pattern realizable by some nonzero direction in
    general position (LP-verified with a strict margin), plus the all-zeros
    pattern.  mode="sampled": distinct patterns realized by `count` seeded
    Gaussian directions, plus the all-zeros pattern.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError("X must be a nonempty 2-d matrix")
    n, d = X.shape
    degenerate = not np.any(X)
    if degenerate:
        return _sorted_set({}, n, d, mode, seed=seed, count=count, degenerate=True)
    if mode == "exact":
        found = _enumerate_exact(X, budget)
        return _sorted_set(found, n, d, "exact")
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    if count is None or count < 0:
        raise ValueError("sampled mode requires count >= 0")
    rng = np.random.default_rng(seed)
    found: dict[int, np.ndarray] = {}
    for _ in range(count):
        w = _sampled_direction(X, rng)
        found.setdefault(pattern_of(X, w).mask, w)
    if len(found) > budget:
        raise BudgetExceededError("sampled set exceeded budget",
                                  count=len(found), budget=budget)
    return _sorted_set(found, n, d, "sampled", seed=seed, count=count)


def _stacked_matrix(X: np.ndarray, choice: Sequence[tuple[ActivationPattern, int]]) -> np.ndarray:
    """[s_1 D_1 X, ..., s_m D_m X] for one per-unit (pattern, sign) choice."""
    blocks = [s * (p.bits()[:, None] * X) for p, s in choice]
    return np.hstack(blocks)


def enumerate_second_layer(X: np.ndarray, first: ArrangementSet, m1: int,
                           mode: str = "exact", count: int | None = None,
                           seed: int | None = None,
                           budget: int = DEFAULT_BUDGET) -> ArrangementSet:
    """Patterns of the second ReLU layer.

    Candidates are arrangements of the stacked matrices built from every
    choice of (first-layer pattern, sign) per unit.  Exact mode unions the
    exact arrangements over all (2 * P1)^m1 stacked matrices; sampled mode
    draws `count` random (choice, direction) pairs.  Witnesses are the
    stacked directions in R^{d * m1}.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if len(first) == 0:
        raise EmptyArrangementError("first-layer arrangement set is empty")
    if m1 < 1:
        raise ValueError("m1 must be >= 1")
    if mode == "exact":
        n_choices = (2 * len(first)) ** m1
        if n_choices > budget:
            raise BudgetExceededError(
                f"{n_choices} stacked-matrix choices exceed budget; use sampled mode",
                count=n_choices, budget=budget)
        import itertools

        found: dict[int, np.ndarray] = {}
        options = [(p, s) for p in first.patterns for s in (1, -1)]
        for choice in itertools.product(options, repeat=m1):
            Xbar = _stacked_matrix(X, choice)
            if not np.any(Xbar):
                continue
            for mask, w in _enumerate_exact(Xbar, budget).items():
                found.setdefault(mask, w)
            if len(found) > budget:
                raise BudgetExceededError("second-layer pattern budget exceeded",
                                          count=len(found), budget=budget)
        return _sorted_set(found, n, d * m1, "exact")
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    if count is None or count < 0:
        raise ValueError("sampled mode requires count >= 0")
    rng = np.random.default_rng(seed)
    found: dict[int, np.ndarray] = {}
    for _ in range(count):
        idx = rng.integers(0, len(first), size=m1)
        sgn = rng.choice([-1, 1], size=m1)
        choice = [(first.patterns[j], int(s)) for j, s in zip(idx, sgn)]
        Xbar = _stacked_matrix(X, choice)
        if not np.any(Xbar):
            continue
        u = _sampled_direction(Xbar, rng)
        found.setdefault(pattern_of(Xbar, u).mask, u)
    return _sorted_set(found, n, d * m1, "sampled", seed=seed, count=count)


def union_sets(a: ArrangementSet, b: ArrangementSet,
               witness_map=None) -> ArrangementSet:
    """Merged pattern set (sorted, deduplicated); witnesses from a win ties.

    witness_map transforms b's witnesses into a's ambient space (used when
    b was enumerated on a compressed matrix whose patterns are realizable on
    the original one through a linear map of directions).
    """
    if a.n != b.n:
        raise ValueError("arrangement sets cover different row counts")
    found = {}
    for p, w in zip(b.patterns, b.witnesses):
        found[p.mask] = witness_map(w) if witness_map is not None else w
    for p, w in zip(a.patterns, a.witnesses):
        found[p.mask] = w
    masks = sorted(found)
    return ArrangementSet(
        n=a.n,
        patterns=tuple(ActivationPattern(m, a.n) for m in masks),
        witnesses=tuple(found[m] for m in masks),
        source="sampled" if "sampled" in (a.source, b.source) else "exact",
        seed=a.seed, count=a.count,
        degenerate=a.degenerate and b.degenerate,
    )


def upper_bound_first(n: int, r: int) -> int:
    """2 * sum_{k=0}^{r-1} C(n-1, k): max patterns of n hyperplanes of rank r.

    Exact integer (Python ints do not overflow).  The all-zeros pattern may
    add one on top of this bound.
    """
    if n < 1 or r < 1:
        raise ValueError("require n >= 1 and r >= 1")
    return 2 * sum(math.comb(n - 1, k) for k in range(r))


def upper_bound_second(n: int, r: int, m1: int) -> int:
    """Worst-case second-layer count: Pbar2 * (2 P1)^m1 with rank m1 * r."""
    if m1 < 1:
        raise ValueError("require m1 >= 1")
    p1 = upper_bound_first(n, r)
    r2 = m1 * r
    pbar2 = 2 * sum(math.comb(n - 1, k) for k in range(r2))
    return pbar2 * (2 * p1) ** m1
