"""Accelerated proximal solver for the penalized convex program, plus a
weak-duality certificate.

The objective splits as f + g with

    f(V) = loss(fit(V), y) + lam * h(V),      g(V) = tau * sum_b ||V_b||_F,

where h is the one-sided relu sum of constraint violations (piecewise
linear; its subgradient at a kink is 0) and the prox of g is blockwise group
soft-thresholding.  Restarted FISTA with backtracking and a monotone accept
rule minimizes f + g; lam escalates geometrically until the constraint total
meets tolerance (the relu penalty is exact, so a finite lam reproduces the
constrained optimum).

The certificate scales a candidate dual point into the dual-feasible region
and evaluates the negated conjugate loss there.  Feasibility uses an upper
bound on the per-block constraint maximum: either the operator-norm bound
with the cone constraints dropped (cheap, default) or the exact
cone-restricted maximum via polyhedral projection (tight).  Any scaled
candidate is feasible, so every reported bound is a valid lower bound.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import convex_program as cp
from .convex_program import ConvexProgram, ConvexVariables
from .losses import SMOOTH, UnsupportedLossError, conjugate, loss_grad, loss_value


class SolverDivergenceError(RuntimeError):
    def __init__(self, message: str, trace: "SolveTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class SolveOptions:
    max_iters: int = 4000
    step: float | None = None           # None: 1 / ||fit operator||^2 estimate
    backtrack_factor: float = 0.5
    backtrack_max_tries: int = 40
    lam: float = 1e-5
    lam_schedule: str = "geometric"     # "fixed" or "geometric"
    lam_multiplier: float = 10.0
    lam_rounds: int = 15
    tol_obj: float = 1e-12
    tol_constraint: float = 1e-9
    seed: int = 0
    project_final: bool = False         # polish onto the feasible cones
    # "squared_hinge" iterates on the smooth surrogate (plain relu penalties
    # defeat the quadratic line-search model at their kinks); "relu" uses the
    # piecewise-linear penalty with its subgradient.
    penalty_form: str = "squared_hinge"
    trace_every: int = 1                # record every k-th accepted iterate
    # "penalty" converts the cones to a penalized term with lam escalation;
    # "project" keeps them exact inside the prox (cone projection followed
    # by the group shrinkage, which is the joint prox since the cones are
    # convex cones).  Projection keeps every iterate feasible but pays a
    # small NNLS per active block.
    constraint_mode: str = "penalty"

    def __post_init__(self):
        if self.tol_obj <= 0 or self.tol_constraint <= 0:
            raise ValueError("tolerances must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.lam_schedule not in ("fixed", "geometric"):
            raise ValueError("lam_schedule must be 'fixed' or 'geometric'")
        if self.penalty_form not in ("squared_hinge", "relu"):
            raise ValueError("penalty_form must be 'squared_hinge' or 'relu'")
        if self.constraint_mode not in ("penalty", "project"):
            raise ValueError("constraint_mode must be 'penalty' or 'project'")


@dataclass
class SolveTrace:
    objective: list[float] = field(default_factory=list)
    group_norm: list[float] = field(default_factory=list)
    constraint_total: list[float] = field(default_factory=list)
    step: list[float] = field(default_factory=list)
    lam: list[float] = field(default_factory=list)
    converged: bool = False
    feasible: bool = False
    final_lam: float = 0.0

    def append(self, obj: float, gnorm: float, ctotal: float, step: float,
               lam: float) -> None:
        self.objective.append(obj)
        self.group_norm.append(gnorm)
        self.constraint_total.append(ctotal)
        self.step.append(step)
        self.lam.append(lam)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "objective", "group_norm",
                             "constraint_total", "step", "lam"])
            for k in range(len(self.objective)):
                writer.writerow([k, self.objective[k], self.group_norm[k],
                                 self.constraint_total[k], self.step[k],
                                 self.lam[k]])


def group_soft_threshold(block: np.ndarray, threshold: float) -> np.ndarray:
    """Prox of threshold * ||.||_F: shrink the block toward zero.

    Returns block * max(0, 1 - threshold / ||block||_F); the zero block when
    the norm is at or below the threshold.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    nrm = float(np.sqrt((block ** 2).sum()))
    if nrm <= threshold:
        return np.zeros_like(block)
    return block * (1.0 - threshold / nrm)


def _prox_all(data: np.ndarray, threshold: float) -> np.ndarray:
    """Blockwise group soft-threshold over the (side, s, l, i) grid."""
    norms = np.sqrt((data ** 2).sum(axis=(-2, -1), keepdims=True))
    scale = np.maximum(0.0, 1.0 - threshold / np.maximum(norms, 1e-300))
    return data * scale


def _prox_project_all(prog: ConvexProgram, data: np.ndarray,
                      threshold: float, mu_cache: dict | None = None) -> np.ndarray:
    """Joint prox of threshold * ||.||_F plus the cone indicator per block:
    project onto the cone, then shrink.

    Screens keep the projection cost on the active support: blocks whose
    norm is at or below the threshold map to zero (the projection is
    nonexpansive); near-feasible blocks (one vectorized pass) skip straight
    to the shrinkage; and a cached dual multiplier per block gives the valid
    upper bound ||c + G' mu|| on the projection norm, zeroing most of the
    rest without solving anything.  Remaining blocks warm-start the dual.
    """
    out = np.zeros_like(data)
    norms = np.sqrt((data ** 2).sum(axis=(-2, -1)))
    viol = np.empty_like(norms)
    for side in (0, 1):
        v1, v2 = cp._violations(prog, data[side])
        viol[side] = v1 + v2
    active = norms > threshold
    shrink = np.where(active, np.maximum(0.0, 1.0 - threshold / np.maximum(norms, 1e-300)), 0.0)
    easy = active & (viol <= 1e-9 * (1.0 + norms))
    out[easy] = data[easy] * shrink[easy][:, None, None]
    for side, s, l, i in zip(*np.nonzero(active & ~easy)):
        key = (int(side), int(s), int(l), int(i))
        G, L = cp._cone_data(prog, key[1], key[2], key[3])
        c = data[side, s, l, i].T.ravel()
        mu0 = mu_cache.get(key) if mu_cache is not None else None
        if mu0 is not None:
            bound = float(np.linalg.norm(c + G.T @ mu0))
            if bound <= threshold:
                continue  # projection norm can only be smaller: block is zero
        # prox-grade tolerance; the final polish re-projects tightly
        p, mu = cp.cone_project_dual(G, c, mu0=mu0, tol=1e-9,
                                     refine_iters=300, L=L)
        if mu_cache is not None and mu is not None:
            mu_cache[key] = mu
        nrm = float(np.linalg.norm(p))
        if nrm > threshold:
            out[side, s, l, i] = (p * (1.0 - threshold / nrm)).reshape(
                prog.m1, prog.d).T
    return out


def _smooth_value_grad(prog: ConvexProgram, data: np.ndarray, lam: float,
                       form: str = "squared_hinge"):
    vars = ConvexVariables(data)
    fit = cp.fit_value(prog, vars)
    val = loss_value(prog.loss, fit, prog.y)
    slab = cp.fit_adjoint(prog, loss_grad(prog.loss, fit, prog.y))
    grad = np.empty_like(data)
    grad[0] = slab[None]
    grad[1] = -slab[None]
    if lam > 0:
        pen = cp.penalty_squared_value_grad if form == "squared_hinge" \
            else cp.penalty_value_grad
        for side in (0, 1):
            pv, pg = pen(prog, data[side])
            val += lam * pv
            grad[side] += lam * pg
    return val, grad


def _smooth_value(prog: ConvexProgram, data: np.ndarray, lam: float,
                  form: str = "squared_hinge") -> float:
    vars = ConvexVariables(data)
    val = loss_value(prog.loss, cp.fit_value(prog, vars), prog.y)
    if lam > 0:
        for side in (0, 1):
            if form == "squared_hinge":
                val += lam * cp.penalty_squared_value(prog, data[side])
            else:
                viol1, viol2 = cp._violations(prog, data[side])
                val += lam * float(viol1.sum() + viol2.sum())
    return val


def _gnorm_both(data: np.ndarray) -> float:
    return cp.group_norm(data[0]) + cp.group_norm(data[1])


def estimate_fit_lipschitz(prog: ConvexProgram, seed: int = 0,
                           iters: int = 30) -> float:
    """Largest squared singular value of the two-sided fit operator."""
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((2, prog.S, prog.P2, prog.P1, prog.d, prog.m1))
    data /= np.linalg.norm(data.ravel())
    sigma2 = 1.0
    for _ in range(iters):
        fit = cp.fit_value(prog, ConvexVariables(data))
        slab = cp.fit_adjoint(prog, fit)
        nxt = np.empty_like(data)
        nxt[0] = slab[None]
        nxt[1] = -slab[None]
        nrm = np.linalg.norm(nxt.ravel())
        if nrm == 0.0:
            return 1.0
        sigma2 = nrm
        data = nxt / nrm
    return float(max(sigma2, 1e-12))


def estimate_constraint_lipschitz(prog: ConvexProgram, seed: int = 0,
                                  iters: int = 30) -> float:
    """Largest squared singular value of the stacked constraint operator for
    one side (power iteration through the penalty linearization)."""
    rng = np.random.default_rng(seed + 1)
    side = rng.standard_normal((prog.S, prog.P2, prog.P1, prog.d, prog.m1))
    side /= np.linalg.norm(side.ravel())
    sgn1 = 2.0 * prog.d1t - 1.0
    sgn2 = 2.0 * prog.d2 - 1.0
    sigma2 = 1.0
    scale1 = sgn1[:, None, None, :, :] * prog.sgn[None, :, None, None, :]
    for _ in range(iters):
        XZ = cp._xz(prog.X, side)
        v1 = scale1 * XZ
        v2 = sgn2[:, None, :, None] * \
            (prog.d1t[:, None, None, :, :] * XZ).sum(axis=4)
        g1 = cp._xt_contract(v1 * scale1, prog.X)
        E2 = (v2 * sgn2[:, None, :, None])[:, :, :, :, None] * \
            prog.d1t[:, None, None, :, :]
        g2 = cp._xt_contract(E2, prog.X)
        nxt = g1 + g2
        nrm = np.linalg.norm(nxt.ravel())
        if nrm == 0.0:
            return 1.0
        sigma2 = nrm
        side = nxt / nrm
    return float(max(sigma2, 1e-12))


def _fista_round(prog: ConvexProgram, data: np.ndarray, lam: float,
                 opts: SolveOptions, step0: float, trace: SolveTrace):
    """One lam round of monotone accelerated proximal descent.

    Monotone FISTA: the prox point z drives the momentum while the kept
    iterate x only ever improves, so the traced objective is nonincreasing
    even when an extrapolated step overshoots.  Returns (x, F(x), step).
    """
    tau = prog.tau
    form = opts.penalty_form
    if opts.constraint_mode == "project":
        mu_cache: dict = {}
        prox = lambda D, thr: _prox_project_all(prog, D, thr, mu_cache)
    else:
        prox = lambda D, thr: _prox_all(D, thr)

    x = data.copy()
    x_prev = x.copy()
    y = x.copy()
    t_prev = 1.0
    F_x = _smooth_value(prog, x, lam, form) + tau * _gnorm_both(x)
    step = step0
    step_max = step0 * 64.0
    stall = 0
    overshoot = 0

    def record(F, W, stp):
        trace.append(F, _gnorm_both(W),
                     cp.penalty_total(prog, ConvexVariables(W)), stp, lam)

    for it in range(opts.max_iters):
        fY, gY = _smooth_value_grad(prog, y, lam, form)
        z, fz, step = _backtrack(prog, y, fY, gY, lam, tau, step, opts, prox)
        Fz = fz + tau * _gnorm_both(z)
        if not np.isfinite(Fz):
            raise SolverDivergenceError("objective is not finite", trace)
        t = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_prev * t_prev))
        if Fz <= F_x:
            new_x, F_new = z, Fz
            overshoot = 0
        else:
            new_x, F_new = x, F_x
            overshoot += 1
        y = new_x + (t_prev / t) * (z - new_x) + \
            ((t_prev - 1.0) / t) * (new_x - x_prev)
        x_prev, x = x, new_x
        improved = F_x - F_new
        F_x = F_new
        if overshoot >= 10:
            # repeated rejections: drop the momentum and continue from x
            y = x.copy()
            t = 1.0
            overshoot = 0
        t_prev = t
        if it % opts.trace_every == 0:
            record(F_x, x, step)
        step = min(step * 1.25, step_max)
        stall = stall + 1 if improved < opts.tol_obj else 0
        if stall >= 20:
            break
    record(F_x, x, step)
    return x, F_x, step


def _backtrack(prog, Y, fY, gY, lam, tau, step, opts, prox=None):
    """Shrink the step until the quadratic majorization holds at the prox point."""
    tries = 0
    if prox is None:
        prox = lambda D, thr: _prox_all(D, thr)
    while True:
        cand = prox(Y - step * gY, step * tau)
        diff = cand - Y
        fc = _smooth_value(prog, cand, lam, opts.penalty_form)
        quad = fY + float(np.vdot(gY, diff)) + float(np.vdot(diff, diff)) / (2.0 * step)
        if fc <= quad + 1e-12 * (1.0 + abs(fY)):
            return cand, fc, step
        tries += 1
        if tries > opts.backtrack_max_tries:
            return cand, fc, step
        step *= opts.backtrack_factor


def solve(prog: ConvexProgram, opts: SolveOptions | None = None,
          init: "ConvexVariables | None" = None):
    """Minimize the penalized objective; returns (ConvexVariables, SolveTrace).

    Deterministic given (prog, opts, init).  Within each lam round the traced
    objective is nonincreasing; lam escalation between rounds re-bases it.
    The reported constraint totals are always the plain relu sums, whichever
    penalty form drives the iterations.
    """
    opts = opts or SolveOptions()
    trace = SolveTrace()
    L_fit = estimate_fit_lipschitz(prog, seed=opts.seed)
    if init is not None:
        data = init.data.copy()
    else:
        data = np.zeros((2, prog.S, prog.P2, prog.P1, prog.d, prog.m1))
    if opts.constraint_mode == "project":
        step = opts.step if opts.step is not None else 1.0 / L_fit
        data, F, step = _fista_round(prog, data, 0.0, opts, step, trace)
        trace.final_lam = 0.0
        trace.feasible = cp.penalty_total(prog, ConvexVariables(data)) <= \
            opts.tol_constraint
        trace.converged = len(trace.objective) < opts.max_iters
        return ConvexVariables(data), trace
    L_con = estimate_constraint_lipschitz(prog, seed=opts.seed)
    lam = opts.lam
    rounds = opts.lam_rounds if opts.lam_schedule == "geometric" else 1
    for _ in range(max(rounds, 1)):
        if opts.step is not None:
            step = opts.step
        elif opts.penalty_form == "squared_hinge":
            step = 1.0 / (L_fit + 2.0 * lam * L_con)
        else:
            step = 1.0 / L_fit
        data, F, step = _fista_round(prog, data, lam, opts, step, trace)
        resid = cp.penalty_total(prog, ConvexVariables(data))
        if resid <= opts.tol_constraint:
            trace.feasible = True
            break
        if opts.lam_schedule == "fixed" or lam == 0.0:
            break
        lam *= opts.lam_multiplier
    trace.final_lam = lam
    trace.converged = len(trace.objective) < opts.max_iters * max(rounds, 1)
    vars = ConvexVariables(data)
    if opts.project_final:
        vars = cp.project_feasible(prog, vars)
        trace.feasible = cp.penalty_total(prog, vars) <= opts.tol_constraint
    return vars, trace


# ---------------------------------------------------------------------------
# duality certificate
# ---------------------------------------------------------------------------

@dataclass
class DualityCertificate:
    lower_bound: float
    rel_gap: float
    primal: float
    scale: float
    method: str


def _block_functionals(prog: ConvexProgram, v: np.ndarray) -> np.ndarray:
    """q[t, l, j, :] = X^T (d1t[:, t, j] * d2[:, l] * v): the per-unit linear
    functionals of the dual block constraints."""
    W = (prog.d1t * v[:, None, None])[:, :, None, :] * prog.d2[:, None, :, None]
    return np.moveaxis(cp._xt_contract(np.moveaxis(W, 2, 1)[:, :, :, None, :], prog.X)[:, :, 0], 2, 3) if False else np.einsum("ntlj,nd->tljd", W, prog.X)


def _relaxed_block_max(prog: ConvexProgram, v: np.ndarray) -> float:
    """Upper bound on the dual block constraint with the cones dropped:
    sqrt(m2) * max over rows (t, l) of the stacked functional norm."""
    q = _block_functionals(prog, v)
    norms = np.sqrt((q ** 2).sum(axis=(-2, -1)))
    return float(np.sqrt(prog.m2) * norms.max(initial=0.0))


def _dual_cone_matrix(prog: ConvexProgram, s: int, l: int, i: int) -> np.ndarray:
    """Constraint rows of the dual block maximization (cached per program).

    This is the cone of the original weight-space variables: plain per-unit
    first-layer rows, per-unit signs on the coupled second-layer rows.
    """
    cache = getattr(prog, "_dual_cone_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(prog, "_dual_cone_cache", cache)
    key = (s, l, i)
    if key not in cache:
        n, d, m1 = prog.n, prog.d, prog.m1
        sgn1 = 2.0 * prog.d1t - 1.0
        sgn2 = 2.0 * prog.d2 - 1.0
        G = np.zeros((n * m1 + n, d * m1))
        for j in range(m1):
            rows = slice(j * n, (j + 1) * n)
            cols = slice(j * d, (j + 1) * d)
            G[rows, cols] = sgn1[:, i, j, None] * prog.X
            G[n * m1:, cols] = prog.sgn[s, j] * sgn2[:, l, None] * \
                (prog.d1t[:, i, j, None] * prog.X)
        norms = np.linalg.norm(G, axis=1)
        G = G[norms > 0] / norms[norms > 0, None]
        if G.shape[0]:
            G = np.unique(np.round(G, 14), axis=0)
        L = float(np.linalg.norm(G @ G.T, 2)) if G.shape[0] else 1.0
        cache[key] = (G, L)
    return cache[key]


def _exact_block_max(prog: ConvexProgram, v: np.ndarray) -> float:
    """Exact dual block constraint maximum over the cone-restricted unit ball.

    Per block, the maximum of a linear functional over (unit ball intersect
    polyhedral cone) is the norm of the cone projection of the functional
    (a small NNLS).  Blocks are visited in decreasing order of their
    cone-free caps so the scan stops as soon as no cap can beat the best.
    """
    m1 = prog.m1
    q = _block_functionals(prog, v)                   # (T, P2, m1, d)
    caps = np.sqrt(prog.m2) * np.sqrt((q ** 2).sum(axis=(-2, -1)))
    order = np.argsort(caps.ravel())[::-1]
    best = 0.0
    for flat in order:
        i, l = np.unravel_index(flat, caps.shape)
        if caps[i, l] <= best:
            break
        for s in range(prog.S):
            c = np.concatenate([np.sqrt(prog.m2) * prog.sgn[s, j] * q[i, l, j]
                                for j in range(m1)])
            G, L = _dual_cone_matrix(prog, s, int(l), int(i))
            # the z side maximizes +c, the z' side -c, over the same cone;
            # cone_max_norm only ever overestimates, keeping the scaled dual
            # point feasible and the certificate valid
            for cc in (c, -c):
                best = max(best, cp.cone_max_norm(G, cc, L=L, floor=best))
    return best


def _feasibilize(prog: ConvexProgram, v: np.ndarray, exact: bool) -> tuple[np.ndarray, float]:
    """Scale v into the dual-feasible set.

    The default (relaxed) path uses min(1, beta / bound) as documented; the
    exact path picks the best feasible scale for the loss at hand (for the
    squared loss the dual value is quadratic in the scale, so the optimum is
    a clipped ratio; for the euclidean loss it is the largest feasible
    scale when the dual value is positive there).
    """
    if not np.any(v):
        return v, 1.0
    bmax = _exact_block_max(prog, v) if exact else _relaxed_block_max(prog, v)
    cmax = np.inf if bmax == 0.0 else prog.beta / bmax
    if prog.loss == "l2":
        nrm = np.linalg.norm(v)
        cmax = min(cmax, 1.0 / nrm if nrm > 0 else np.inf)
        if not exact:
            cmax = min(cmax, 1.0)
        scale = cmax if float(prog.y @ v) < 0.0 else 0.0
        if not np.isfinite(scale):
            scale = 0.0
        return v * scale, scale
    if not exact:
        scale = min(1.0, cmax)
        return v * scale, scale
    # squared loss: maximize -y.(cv) - 0.5 c^2 ||v||^2 over c in [0, cmax]
    vv = float(v @ v)
    c_opt = -float(prog.y @ v) / vv if vv > 0 else 0.0
    scale = float(np.clip(c_opt, 0.0, cmax))
    return v * scale, scale


def _dual_value(prog: ConvexProgram, v: np.ndarray) -> float:
    return -conjugate(prog.loss, v, prog.y)


def _companion_path_bound(prog: ConvexProgram, opts: SolveOptions,
                          rounds: int, init_vars: "ConvexVariables | None" = None,
                          theta0: float | None = None) -> float:
    """Lower bounds for the euclidean-norm loss from squared-loss companions.

    The squared-loss companion with weight theta * beta has residual
    v = yhat - y meeting its own block bounds at level theta * beta at
    optimality; rescaled into this program's dual set it is feasible, and at
    the matched point theta = ||v_theta|| the companion solution is the
    euclidean-loss optimum and the scaled residual its exact dual.  A
    safeguarded secant iteration drives theta - ||v_theta|| to zero; every
    probe yields a valid bound and the best one is returned.  When the
    euclidean problem interpolates, ||v_theta|| stays below theta and the
    iteration walks theta down instead, which converges to the
    interpolation dual.
    """
    from dataclasses import replace

    base = replace(opts, project_final=False)
    best = -np.inf
    # the matched point satisfies theta = ||residual||, and the euclidean
    # solution's residual norm is exactly that, so seeding the path there
    # (with the solved variables as warm start) skips the expensive cold probe
    warm: ConvexVariables | None = init_vars

    def probe(theta):
        nonlocal warm, best
        prog2 = cp.build(prog.X, prog.y, prog.first, prog.second, prog.signs,
                         prog.m1, prog.m2, prog.beta * theta, loss="squared")
        sol, _ = solve(prog2, base, init=warm)
        warm = sol
        v = cp.fit_value(prog2, sol) - prog.y
        vf, _ = _feasibilize(prog, v, exact=True)
        best = max(best, _dual_value(prog, vf))
        return float(np.linalg.norm(v))

    theta = float(np.clip(theta0, 1e-4, 16.0)) if theta0 else 1.0
    r = probe(theta)
    left = 0
    history = [(theta, r)]
    for _ in range(max(rounds, 1) - 1):
        if abs(r - theta) <= 1e-9 * max(theta, 1.0):
            break
        if len(history) >= 2:
            (t0, r0), (t1, r1) = history[-2], history[-1]
            phi0, phi1 = t0 - r0, t1 - r1
            if phi1 != phi0:
                nxt = t1 - phi1 * (t1 - t0) / (phi1 - phi0)
            else:
                nxt = r1
        else:
            nxt = r
        if not np.isfinite(nxt) or nxt <= 0:
            nxt = max(r, 1e-6)
        nxt = float(np.clip(nxt, theta * 0.05, theta * 20.0))
        if nxt < 1e-6:
            left += 1
            if left > 2:
                break
        theta = nxt
        r = probe(theta)
        history.append((theta, r))
    return best


def duality_gap(prog: ConvexProgram, vars: ConvexVariables,
                tighten: bool = False, ascent_iters: int = 0,
                companion_rounds: int = 0,
                companion_opts: SolveOptions | None = None) -> DualityCertificate:
    """Weak-duality lower bound and relative gap for a feasible solution.

    The dual candidate is the loss gradient at the fit (for the squared
    loss, the residual yhat - y); it is scaled into the dual-feasible set,
    so the bound is valid for any input.  tighten=True switches the block
    maximum to the exact cone-restricted value and, with ascent_iters > 0,
    runs a feasible supergradient ascent; companion_rounds > 0 adds
    squared-loss path candidates (euclidean loss only), which stay tight
    even when the solution interpolates and the residual direction carries
    no dual information.
    """
    if prog.loss not in ("squared", "l2"):
        raise UnsupportedLossError(
            f"duality certificate needs a closed-form conjugate; got {prog.loss!r}")
    fit = cp.fit_value(prog, vars)
    primal = loss_value(prog.loss, fit, prog.y) + \
        prog.tau * (cp.group_norm(vars.z) + cp.group_norm(vars.zp))
    v0 = loss_grad(prog.loss, fit, prog.y)
    v, scale = _feasibilize(prog, v0, exact=tighten)
    best = _dual_value(prog, v)
    method = "exact-cone" if tighten else "relaxed"
    if tighten and ascent_iters > 0:
        best_v = v
        for start in (v, _feasibilize(prog, -prog.y, exact=True)[0]):
            cur = start
            val = _dual_value(prog, cur)
            if val > best:
                best, best_v = val, cur
            step = 1.0 / max(1.0, float(np.linalg.norm(prog.y)))
            for _ in range(ascent_iters):
                g = -prog.y - cur if prog.loss == "squared" else -prog.y
                cand, _ = _feasibilize(prog, cur + step * g, exact=True)
                cval = _dual_value(prog, cand)
                if cval > val:
                    cur, val = cand, cval
                    step *= 1.3
                    if val > best:
                        best, best_v = val, cur
                else:
                    step *= 0.5
                    if step < 1e-14:
                        break
        method = "exact-cone+ascent"
        v = best_v
    if companion_rounds > 0 and prog.loss == "l2":
        cb = _companion_path_bound(prog, companion_opts or SolveOptions(),
                                   companion_rounds, init_vars=vars,
                                   theta0=float(np.linalg.norm(fit - prog.y)))
        if cb > best:
            best = cb
            method = "companion-path"
    rel_gap = (primal - best) / max(1.0, abs(primal))
    return DualityCertificate(lower_bound=best, rel_gap=rel_gap,
                              primal=primal, scale=scale, method=method)
