"""Weighted Lasso on transformed data.

Solves  min_b  (1/2n) ||y - X b||_2^2 + lambda * sum_l w_l |b_l|  by cyclic
coordinate descent (numba-compiled inner loops, warm starts along a penalty
path).  Includes 10-fold cross-validation for the penalty level, the
variance-inflation rule used to pick the projection penalty, and a slow
proximal-gradient solver kept as an independent reference for testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import (
    DegenerateDenominatorError,
    DegenerateFoldsError,
    MaxIterExceededError,
    NonFiniteError,
)
from .spectral import SpectralTransform

# Columns with squared norm below this are treated as zero; their
# coefficients are pinned to 0.
_ZERO_COL = 1e-300


@dataclass
class LassoProblem:
    """A weighted Lasso instance on (already transformed) data.

    weights holds per-column penalty multipliers, canonically
    ||X_l||_2 / sqrt(n) for the transformed design.
    """

    Xt: np.ndarray
    yt: np.ndarray
    weights: np.ndarray
    lam: float

    def __post_init__(self):
        self.Xt = np.ascontiguousarray(self.Xt, dtype=float)
        self.yt = np.asarray(self.yt, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        n, d = self.Xt.shape
        if self.yt.shape != (n,):
            raise ValueError(f"yt must have shape ({n},), got {self.yt.shape}")
        if self.weights.shape != (d,):
            raise ValueError(f"weights must have shape ({d},), got {self.weights.shape}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not (np.all(np.isfinite(self.Xt)) and np.all(np.isfinite(self.yt))):
            raise NonFiniteError("design or response contains NaN/Inf")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")


@dataclass
class LassoFit:
    coef: np.ndarray
    objective: float
    iterations: int
    kkt_violation: float
    lambda_used: float
    converged: bool = True
    flags: tuple[str, ...] = ()


@njit(cache=True, fastmath=True)
def _cd_sweep_set(X, resid, coef, w, col_sq, idx, lam, move_tol, max_passes):  # pragma: no cover
    """Cyclic coordinate sweeps over the index set idx, in place.

    Stops when the largest gradient-scale move |delta| * col_sq falls below
    move_tol or the pass budget is exhausted.  X must be Fortran-ordered;
    resid is kept consistent with coef.  Returns the number of passes.
    """
    n = X.shape[0]
    passes = 0
    while passes < max_passes:
        passes += 1
        max_move = 0.0
        for t in range(idx.size):
            l = idx[t]
            csq = col_sq[l]
            if csq <= 0.0:
                continue
            g = 0.0
            for i in range(n):
                g += X[i, l] * resid[i]
            g /= n
            old = coef[l]
            rho = g + csq * old
            lw = lam * w[l]
            new = 0.0
            if rho > lw:
                new = (rho - lw) / csq
            elif rho < -lw:
                new = (rho + lw) / csq
            if new != old:
                delta = new - old
                coef[l] = new
                for i in range(n):
                    resid[i] -= X[i, l] * delta
                mv = abs(delta) * csq
                if mv > max_move:
                    max_move = mv
        if max_move <= move_tol:
            break
    return passes


class _CdState:
    """Warm-startable coordinate-descent state for one dataset.

    The outer loop alternates a BLAS gradient scan (honest KKT residual over
    all columns) with compiled sweeps over the eligible set, grown by the
    observed violators.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, weights: np.ndarray):
        self.X = np.asfortranarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.w = np.asarray(weights, dtype=float)
        self.n, self.d = X.shape
        self.col_sq = np.einsum("ij,ij->j", self.X, self.X) / self.n
        self.col_sq[self.col_sq <= _ZERO_COL] = 0.0
        self.coef = np.zeros(self.d)
        self.resid = self.y.copy()
        self.passes = 0

    def set_coef(self, coef: np.ndarray) -> None:
        self.coef = np.array(coef, dtype=float)
        self.coef[self.col_sq == 0.0] = 0.0
        self.resid = self.y - self.X @ self.coef

    def _violations(self, lam: float) -> np.ndarray:
        g = self.X.T @ self.resid / self.n
        lw = lam * self.w
        viol = np.maximum(np.abs(g) - lw, 0.0)
        active = self.coef != 0.0
        viol[active] = np.abs(g[active] - lw[active] * np.sign(self.coef[active]))
        viol[self.col_sq == 0.0] = 0.0
        return viol

    def solve(self, lam: float, tol: float, max_passes: int) -> tuple[float, bool]:
        start = self.passes
        move_tol = 0.02 * tol
        eligible = self.coef != 0.0
        while True:
            viol = self._violations(lam)
            worst = float(viol.max()) if viol.size else 0.0
            if worst <= tol:
                return worst, True
            if self.passes - start >= max_passes:
                return worst, False
            grew = viol > tol
            if not np.any(grew & ~eligible):
                # all violators already eligible: the sweeps under-resolved
                move_tol *= 0.25
            eligible |= grew
            idx = np.flatnonzero(eligible)
            self.passes += _cd_sweep_set(
                self.X, self.resid, self.coef, self.w, self.col_sq,
                idx, float(lam), move_tol, int(max_passes - (self.passes - start)),
            )
            eligible = eligible | (self.coef != 0.0)

    def kkt_violation(self, lam: float) -> float:
        """Recompute the stationarity residual from scratch."""
        self.resid = self.y - self.X @ self.coef
        viol = self._violations(lam)
        return float(viol.max()) if viol.size else 0.0

    def r_squared(self) -> float:
        y_ss = float(self.y @ self.y)
        if y_ss == 0.0:
            return 1.0
        return 1.0 - float(self.resid @ self.resid) / y_ss

    def objective(self, lam: float) -> float:
        r = self.y - self.X @ self.coef
        return float(r @ r / (2 * self.n) + lam * np.sum(self.w * np.abs(self.coef)))


def solve(
    problem: LassoProblem,
    tol: float = 1e-7,
    max_iter: int | None = None,
    coef_init: np.ndarray | None = None,
) -> LassoFit:
    """Coordinate-descent solution of a weighted Lasso problem.

    On hitting the iteration budget (``max_iter`` sweeps, default 10 per
    column) the best iterate is returned with ``converged=False`` rather
    than raising.
    """
    n, d = problem.Xt.shape
    if max_iter is None:
        max_iter = 10 * d
    state = _CdState(problem.Xt, problem.yt, problem.weights)
    if coef_init is not None:
        state.set_coef(coef_init)
    state.solve(problem.lam, tol, max_iter)
    worst = state.kkt_violation(problem.lam)
    if worst > tol and state.passes < max_iter:
        state.solve(problem.lam, tol, max_iter - state.passes)
        worst = state.kkt_violation(problem.lam)
    converged = worst <= tol
    return LassoFit(
        coef=state.coef.copy(),
        objective=state.objective(problem.lam),
        iterations=state.passes,
        kkt_violation=worst,
        lambda_used=problem.lam,
        converged=converged,
        flags=() if converged else ("max_iter_exceeded",),
    )


def lambda_grid(
    Xt: np.ndarray,
    yt: np.ndarray,
    weights: np.ndarray,
    size: int = 100,
    min_ratio: float = 1e-3,
) -> np.ndarray:
    """Descending log-spaced penalty path from the smallest all-zero lambda."""
    n = Xt.shape[0]
    score = np.abs(Xt.T @ yt) / n
    w = np.asarray(weights, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(w > 0, score / w, 0.0)
    lam_max = float(np.max(ratios)) if ratios.size else 0.0
    if lam_max <= 0:
        lam_max = 1.0  # degenerate (y orthogonal to all columns); any path works
    if size == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_max * min_ratio, size)


def solve_path(
    Xt: np.ndarray,
    yt: np.ndarray,
    weights: np.ndarray,
    grid: np.ndarray,
    tol: float = 1e-7,
    max_iter_per_lambda: int | None = None,
    saturation_r2: float | None = None,
) -> list[np.ndarray]:
    """Warm-started coefficient path along a descending penalty grid.

    When ``saturation_r2`` is set, refinement stops once the in-sample R^2
    exceeds it (the fit is interpolating); remaining grid points reuse the
    last coefficients.  Meant for model selection, where the deep overfit
    tail of the path cannot win anyway.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or (grid.size > 1 and np.any(np.diff(grid) >= 0)):
        raise ValueError("grid must be nonempty and strictly decreasing")
    d = Xt.shape[1]
    budget = max_iter_per_lambda if max_iter_per_lambda is not None else 10 * d
    state = _CdState(Xt, yt, np.asarray(weights, dtype=float))
    coefs = []
    saturated = False
    for lam in grid:
        if not saturated:
            state.solve(float(lam), tol, budget)
            if saturation_r2 is not None and state.r_squared() >= saturation_r2:
                saturated = True
        coefs.append(state.coef.copy())
    return coefs


def _fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([abs(int(seed)), n, folds])
    perm = rng.permutation(n)
    ids = np.empty(n, dtype=int)
    ids[perm] = np.arange(n) % folds
    return ids


def cv_lambda(
    Xt: np.ndarray,
    yt: np.ndarray,
    weights: np.ndarray,
    folds: int,
    grid: np.ndarray,
    seed: int = 0,
    tol: float = 1e-4,
    saturation_r2: float | None = 0.99,
    max_iter_per_lambda: int | None = 50,
) -> float:
    """Pick the grid penalty minimizing K-fold held-out squared error.

    Fold assignment is a deterministic function of (n, folds, seed); fits are
    warm-started along the descending grid within each fold.  Fold fits use a
    looser stationarity tolerance than final fits (selection only) and stop
    refining once a fit saturates in sample.
    """
    Xt = np.asarray(Xt, dtype=float)
    yt = np.asarray(yt, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if grid.size == 0 or (grid.size > 1 and np.any(np.diff(grid) >= 0)):
        raise ValueError("grid must be nonempty and strictly decreasing")
    n = Xt.shape[0]
    ids = _fold_ids(n, folds, seed)
    counts = np.bincount(ids, minlength=folds)
    if np.any(counts == 0):
        raise DegenerateFoldsError(
            f"{int(np.sum(counts == 0))} empty folds for n={n}, folds={folds}"
        )
    sse = np.zeros(grid.size)
    for f in range(folds):
        test = ids == f
        train = ~test
        coefs = solve_path(
            Xt[train], yt[train], weights, grid, tol=tol,
            saturation_r2=saturation_r2, max_iter_per_lambda=max_iter_per_lambda,
        )
        X_test, y_test = Xt[test], yt[test]
        for k, coef in enumerate(coefs):
            nz = np.flatnonzero(coef)
            pred = X_test[:, nz] @ coef[nz] if nz.size else 0.0
            resid = y_test - pred
            sse[k] += float(resid @ resid)
    return float(grid[int(np.argmin(sse / n))])


@dataclass
class ProjectionPathInputs:
    """Everything needed to evaluate the projection-variance functional
    v(lambda) = Z^T P^4 Z / (Z^T P^2 x_target)^2 along a penalty path, where
    Z = x_target - X_others @ gamma(lambda)."""

    transform: SpectralTransform
    X_others: np.ndarray
    x_target: np.ndarray
    Xt_others: np.ndarray
    xt_target: np.ndarray
    weights: np.ndarray
    grid: np.ndarray


@dataclass
class InflationResult:
    lambda_j: float
    fit: LassoFit
    v_selected: float
    v_cv: float
    reached_target: bool
    flags: tuple[str, ...] = ()


def _variance_functional(
    inputs: ProjectionPathInputs, gamma: np.ndarray
) -> tuple[float, bool]:
    """(v, degenerate) for one coefficient vector."""
    nz = np.flatnonzero(gamma)
    Z = inputs.x_target - (inputs.X_others[:, nz] @ gamma[nz] if nz.size else 0.0)
    P2Z = inputs.transform.apply(Z, 2)
    den = float(P2Z @ inputs.x_target)
    z_norm = float(np.linalg.norm(Z))
    x_norm = float(np.linalg.norm(inputs.x_target))
    if den == 0.0 or abs(den) < 1e-12 * z_norm * x_norm:
        return np.inf, True
    return float(P2Z @ P2Z) / den**2, False


def inflate_lambda_for_variance(
    inputs: ProjectionPathInputs,
    lambda_cv: float,
    target_inflation: float = 1.25,
    tol: float = 1e-7,
) -> InflationResult:
    """Raise the projection penalty until the variance functional inflates.

    Scans the grid values >= lambda_cv in increasing order and returns the
    smallest one whose v reaches target_inflation * v(lambda_cv); falls back
    to the largest grid value (flagged) when the target is unreachable.
    """
    grid = np.asarray(inputs.grid, dtype=float)
    cand = np.unique(np.concatenate([grid[grid >= lambda_cv], [lambda_cv]]))[::-1]
    # descending fit order for warm starts
    state = _CdState(
        np.asarray(inputs.Xt_others, dtype=float),
        np.asarray(inputs.xt_target, dtype=float),
        np.asarray(inputs.weights, dtype=float),
    )
    budget = 10 * inputs.Xt_others.shape[1]
    fits: dict[float, tuple[np.ndarray, float, bool]] = {}
    values: dict[float, float] = {}
    degenerate: dict[float, bool] = {}
    for lam in cand:
        kkt, ok = state.solve(float(lam), tol, budget)
        gamma = state.coef.copy()
        fits[float(lam)] = (gamma, kkt, ok)
        v, bad = _variance_functional(inputs, gamma)
        values[float(lam)] = v
        degenerate[float(lam)] = bad
    if all(degenerate.values()):
        raise DegenerateDenominatorError(
            "projection denominator vanished along the whole penalty grid"
        )
    flags: list[str] = []
    base_lam = float(lambda_cv)
    if degenerate[base_lam]:
        base_lam = min(l for l in values if not degenerate[l])
        flags.append("degenerate_at_cv")
    v_cv = values[base_lam]
    target = target_inflation * v_cv
    selected = None
    for lam in sorted(values):  # ascending
        if lam < base_lam or degenerate[lam]:
            continue
        if values[lam] >= target:
            selected = lam
            break
    reached = selected is not None
    if not reached:
        selected = max(l for l in values if not degenerate[l])
        flags.append("inflation_target_unreached")
    gamma, kkt, ok = fits[selected]
    fit = LassoFit(
        coef=gamma,
        objective=float("nan"),
        iterations=state.passes,
        kkt_violation=kkt,
        lambda_used=float(selected),
        converged=ok,
        flags=() if ok else ("max_iter_exceeded",),
    )
    return InflationResult(
        lambda_j=float(selected),
        fit=fit,
        v_selected=values[selected],
        v_cv=v_cv,
        reached_target=reached,
        flags=tuple(flags),
    )


def prox_grad_reference(
    problem: LassoProblem, tol: float = 1e-12, max_iter: int = 500_000
) -> LassoFit:
    """ISTA with backtracking; slow but independent of the coordinate solver.

    Used as the testing oracle.  Raises MaxIterExceededError if the KKT
    residual cannot be driven below tol within the budget.
    """
    X, y, w, lam = problem.Xt, problem.yt, problem.weights, problem.lam
    n, d = X.shape
    beta = np.zeros(d)
    # exact Lipschitz constant of the smooth part; the backtracking below is
    # a safety net and should not fire
    sv_top = np.linalg.svd(X, compute_uv=False)[0] if min(n, d) else 0.0
    L = max(float(sv_top) ** 2 / n, 1e-12)
    r = y - X @ beta
    f = float(r @ r) / (2 * n)
    worst = np.inf
    for it in range(1, max_iter + 1):
        grad = -(X.T @ r) / n
        while True:
            step = 1.0 / L
            cand = beta - step * grad
            thresh = lam * w * step
            cand = np.sign(cand) * np.maximum(np.abs(cand) - thresh, 0.0)
            diff = cand - beta
            r_cand = y - X @ cand
            f_cand = float(r_cand @ r_cand) / (2 * n)
            slack = 1e-12 * (1.0 + abs(f))
            if f_cand <= f + float(grad @ diff) + 0.5 * L * float(diff @ diff) + slack:
                break
            L *= 2.0
        beta, r, f = cand, r_cand, f_cand
        if it % 25 and it != max_iter:
            continue
        g = (X.T @ r) / n
        lw = lam * w
        viol = np.maximum(np.abs(g) - lw, 0.0)
        active = beta != 0.0
        viol[active] = np.abs(g[active] - lw[active] * np.sign(beta[active]))
        worst = float(viol.max()) if viol.size else 0.0
        if worst <= tol:
            obj = f + lam * float(np.sum(w * np.abs(beta)))
            return LassoFit(
                coef=beta,
                objective=obj,
                iterations=it,
                kkt_violation=worst,
                lambda_used=lam,
                converged=True,
            )
    raise MaxIterExceededError(f"reference solver stuck at KKT residual {worst:.3e}")
