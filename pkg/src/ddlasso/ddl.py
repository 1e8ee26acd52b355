"""Doubly debiased Lasso: point estimates, variance and confidence intervals
for single coefficients of a high-dimensional linear model whose covariates
carry dense hidden confounding.

The pipeline: (1) a spectral-deconfounding initial estimator, the weighted
Lasso on trim-transformed data (Q X, Q Y); (2) per target j, a projection
direction Z_j = X_j - X_{-j} gamma_hat obtained from a second weighted Lasso
on data transformed by the trim of X_{-j}; (3) the debiased estimate

    beta_hat_j = Z_j^T P^2 (Y - X_{-j} beta_init_{-j}) / (Z_j^T P^2 X_j)

with closed-form variance  sigma_e^2 * Z_j^T P^4 Z_j / (Z_j^T P^2 X_j)^2.
Setting both transforms to the identity recovers the standard debiased Lasso.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, ndtri

from . import lasso
from .errors import DegenerateDenominatorError, EstimationError, OutOfRangeError
from .spectral import (
    SpectralTransform,
    identity_transform,
    pca_adjust,
    svd_thin,
    trim_transform,
)

logger = logging.getLogger(__name__)

DEGENERACY_RTOL = 1e-12  # |Z^T P^2 x_j| below this times ||Z|| ||x_j|| is degenerate


@dataclass(frozen=True)
class CvTuning:
    """Penalty selection by cross-validation plus the variance-inflation rule."""

    folds: int = 10
    grid_size: int = 100
    grid_min_ratio: float = 1e-3
    target_inflation: float = 1.25


@dataclass(frozen=True)
class TheoryTuning:
    """Rate-derived penalties lambda = a * sigma * sqrt(log(p)/n).

    sigma_e scales the initial-estimator penalty, sigma_j the projection
    penalty; both must be supplied (simulation code passes the truth).
    """

    a: float = 2.0
    sigma_e: float = 1.0
    sigma_j: float = 1.0


@dataclass(frozen=True)
class DdlConfig:
    """Tuning of the full pipeline.

    rho / rho_j are the trim fractions for the whole-design and per-target
    transforms; rho_j = 0 yields the identity (no shrinkage).  The
    ``proj_transform`` override lets the projection step use a different
    transform kind than the initial estimator (e.g. "identity" for the
    debiased-Lasso-with-deconfounded-init baseline).
    """

    rho: float = 0.5
    rho_j: float = 0.5
    alpha: float = 0.05
    tuning: CvTuning | TheoryTuning = field(default_factory=CvTuning)
    transform: str = "trim"  # "trim" | "pca" | "identity"
    pca_rank: int | None = None
    proj_transform: str | None = None
    proj_pca_rank: int | None = None
    center: bool = True
    solver_tol: float = 1e-7
    q_hint: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0 or not 0.0 <= self.rho_j <= 1.0:
            raise ValueError("rho and rho_j must lie in [0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        for kind in (self.transform, self.proj_transform):
            if kind is not None and kind not in ("trim", "pca", "identity"):
                raise ValueError(f"unknown transform kind {kind!r}")
        if self.transform == "pca" and self.pca_rank is None:
            raise ValueError("pca transform needs pca_rank")
        if self.proj_transform == "pca" and self.proj_pca_rank is None and self.pca_rank is None:
            raise ValueError("pca projection transform needs proj_pca_rank")


@dataclass
class ProjectionDirection:
    """Residual direction decoupling the target column from the others.

    Z_j = X_j - X_{-j} gamma_hat holds exactly; P Z_j and P^2 Z_j are cached.
    """

    j: int
    gamma_hat: np.ndarray
    Zj: np.ndarray
    PZj: np.ndarray
    P2Zj: np.ndarray
    lambda_j_used: float
    transform: SpectralTransform
    flags: tuple[str, ...] = ()


@dataclass
class DdlResult:
    j: int
    beta_hat: float
    variance: float
    ci_low: float
    ci_high: float
    sigma_e2_hat: float
    p_value: float
    denominator: float
    lambda_used: float
    lambda_j_used: float
    flags: tuple[str, ...] = ()


@dataclass
class DdlInternals:
    """Pipeline internals for one target, as used in simulation accounting."""

    j: int
    X: np.ndarray  # arrays actually used by the estimator (post centering)
    Y: np.ndarray
    q_transform: SpectralTransform
    init: lasso.LassoFit
    proj: ProjectionDirection
    sigma_e2_hat: float
    denominator: float


def normal_quantile(prob: float) -> float:
    """Inverse standard-normal CDF."""
    if not 0.0 < prob < 1.0:
        raise OutOfRangeError(f"prob must lie in (0, 1), got {prob}")
    return float(ndtri(prob))


def gaussian_two_sided_pvalue(t: float) -> float:
    """2 * (1 - Phi(|t|)) through the erfc kernel."""
    return float(erfc(abs(t) / math.sqrt(2.0)))


def confidence_interval(beta_hat: float, variance: float, alpha: float) -> tuple[float, float]:
    """beta_hat -/+ z_{1-alpha/2} * sqrt(variance)."""
    if variance < 0:
        raise ValueError("variance must be >= 0")
    half = normal_quantile(1.0 - alpha / 2.0) * math.sqrt(variance)
    return beta_hat - half, beta_hat + half


def are(c_star: float, rho_star: float) -> tuple[float, float]:
    """Efficiency range relative to the Gauss-Markov bound.

    c_star is the limit of p/n (may be inf); rho_star the limiting trim
    fraction.  Returns (lower, upper) of the relative-efficiency interval
    [1/min(c*,1), 1/((1-rho*) min(c*,1))].
    """
    if not c_star > 0:
        raise ValueError("c_star must be > 0")
    if not 0.0 <= rho_star < 1.0:
        raise ValueError("rho_star must lie in [0, 1)")
    c = min(c_star, 1.0)
    return 1.0 / c, 1.0 / ((1.0 - rho_star) * c)


def _column_weights(Mt: np.ndarray) -> np.ndarray:
    n = Mt.shape[0]
    return np.linalg.norm(Mt, axis=0) / math.sqrt(n)


def _make_transform(
    M: np.ndarray, kind: str, rho: float, pca_rank: int | None, q_hint: int | None
) -> SpectralTransform:
    n = M.shape[0]
    if kind == "identity":
        return identity_transform(n)
    factors = svd_thin(M)
    if kind == "pca":
        return pca_adjust(factors, int(pca_rank))
    T = trim_transform(factors, rho)
    if q_hint is not None and math.floor(rho * factors.m) < q_hint + 1:
        logger.warning(
            "trim keeps only %d directions but the confounder hint needs >= %d",
            math.floor(rho * factors.m), q_hint + 1,
        )
    return T


def _theory_lambda(a: float, sigma: float, p: int, n: int) -> float:
    return a * sigma * math.sqrt(math.log(p) / n)


def _prepare(X: np.ndarray, Y: np.ndarray, config: DdlConfig) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.shape != (X.shape[0],):
        raise ValueError("X must be 2-d and Y must match its rows")
    if config.center:
        X = X - X.mean(axis=0)
        Y = Y - Y.mean()
    return X, Y


def _initial(
    X: np.ndarray, Y: np.ndarray, config: DdlConfig, seed: int
) -> tuple[lasso.LassoFit, SpectralTransform]:
    n, p = X.shape
    Q = _make_transform(X, config.transform, config.rho, config.pca_rank, config.q_hint)
    QX = Q.apply(X)
    QY = Q.apply(Y)
    weights = _column_weights(QX)
    if isinstance(config.tuning, TheoryTuning):
        lam = _theory_lambda(config.tuning.a, config.tuning.sigma_e, p, n)
    else:
        grid = lasso.lambda_grid(
            QX, QY, weights, size=config.tuning.grid_size, min_ratio=config.tuning.grid_min_ratio
        )
        lam = lasso.cv_lambda(QX, QY, weights, config.tuning.folds, grid, seed=seed)
    fit = lasso.solve(lasso.LassoProblem(QX, QY, weights, lam), tol=config.solver_tol)
    return fit, Q


def initial_estimator(
    X: np.ndarray, Y: np.ndarray, config: DdlConfig | None = None, seed: int = 0
) -> tuple[lasso.LassoFit, SpectralTransform]:
    """Spectral-deconfounding initial estimate: weighted Lasso on (Q X, Q Y).

    Returns the fit together with the transform Q used to build it.
    """
    config = config or DdlConfig()
    X, Y = _prepare(X, Y, config)
    return _initial(X, Y, config, seed)


def noise_level(
    X: np.ndarray, Y: np.ndarray, beta_init: np.ndarray, Q: SpectralTransform
) -> float:
    """Noise-variance estimate ||Q(Y - X beta_init)||^2 / Tr(Q^2)."""
    trace2 = Q.trace_power(2)
    if trace2 <= 0:
        raise ValueError("Tr(Q^2) must be positive")
    nz = np.flatnonzero(beta_init)
    resid = Y - (X[:, nz] @ beta_init[nz] if nz.size else 0.0)
    resid_t = Q.apply(resid)
    return float(resid_t @ resid_t) / trace2


def _projection_transform_kind(config: DdlConfig) -> tuple[str, int | None]:
    kind = config.proj_transform or config.transform
    rank = config.proj_pca_rank if config.proj_pca_rank is not None else config.pca_rank
    return kind, rank


def _projection(
    X: np.ndarray, j: int, config: DdlConfig, seed: int
) -> ProjectionDirection:
    n, p = X.shape
    others = np.delete(X, j, axis=1)
    xj = np.ascontiguousarray(X[:, j])
    kind, rank = _projection_transform_kind(config)
    P = _make_transform(others, kind, config.rho_j, rank, config.q_hint)
    PX = P.apply(others)
    Pxj = P.apply(xj)
    weights = _column_weights(PX)
    flags: list[str] = []
    if isinstance(config.tuning, TheoryTuning):
        lam_j = _theory_lambda(config.tuning.a, config.tuning.sigma_j, p, n)
        fit = lasso.solve(lasso.LassoProblem(PX, Pxj, weights, lam_j), tol=config.solver_tol)
    else:
        grid = lasso.lambda_grid(
            PX, Pxj, weights, size=config.tuning.grid_size, min_ratio=config.tuning.grid_min_ratio
        )
        lam_cv = lasso.cv_lambda(PX, Pxj, weights, config.tuning.folds, grid, seed=seed)
        inputs = lasso.ProjectionPathInputs(
            transform=P, X_others=others, x_target=xj,
            Xt_others=PX, xt_target=Pxj, weights=weights, grid=grid,
        )
        inflation = lasso.inflate_lambda_for_variance(
            inputs, lam_cv, config.tuning.target_inflation, tol=config.solver_tol
        )
        fit = inflation.fit
        lam_j = inflation.lambda_j
        flags.extend(inflation.flags)
    if not fit.converged:
        flags.append("projection_not_converged")
    gamma = fit.coef
    nz = np.flatnonzero(gamma)
    Zj = xj - (others[:, nz] @ gamma[nz] if nz.size else 0.0)
    return ProjectionDirection(
        j=j,
        gamma_hat=gamma,
        Zj=Zj,
        PZj=P.apply(Zj),
        P2Zj=P.apply(Zj, 2),
        lambda_j_used=float(lam_j),
        transform=P,
        flags=tuple(flags),
    )


def projection_direction(
    X: np.ndarray, j: int, config: DdlConfig | None = None, seed: int = 0
) -> ProjectionDirection:
    """Projection direction for target column j (0-based)."""
    config = config or DdlConfig()
    X = np.asarray(X, dtype=float)
    if config.center:
        X = X - X.mean(axis=0)
    if not 0 <= j < X.shape[1]:
        raise ValueError(f"target index {j} outside [0, {X.shape[1]})")
    return _projection(X, j, config, seed)


def _denominator(proj: ProjectionDirection, xj: np.ndarray) -> float:
    den = float(proj.P2Zj @ xj)
    floor = DEGENERACY_RTOL * float(np.linalg.norm(proj.Zj)) * float(np.linalg.norm(xj))
    if den == 0.0 or abs(den) < floor:
        raise DegenerateDenominatorError(
            f"projection denominator {den:.3e} below degeneracy floor {floor:.3e}"
        )
    return den


def point_estimate(
    Y: np.ndarray, X: np.ndarray, j: int, beta_init: np.ndarray, proj: ProjectionDirection
) -> float:
    """Debiased point estimate  Z^T P^2 (Y - X_{-j} beta_init_{-j}) / Z^T P^2 X_j."""
    X = np.asarray(X, dtype=float)
    xj = X[:, j]
    den = _denominator(proj, xj)
    binit = np.delete(np.asarray(beta_init, dtype=float), j)
    nz = np.flatnonzero(binit)
    others = np.delete(X, j, axis=1)
    resid = Y - (others[:, nz] @ binit[nz] if nz.size else 0.0)
    return float(proj.P2Zj @ resid) / den


def variance_estimate(proj: ProjectionDirection, xj: np.ndarray, sigma_e2_hat: float) -> float:
    """Variance  sigma_e2 * Z^T P^4 Z / (Z^T P^2 X_j)^2  of the point estimate."""
    den = _denominator(proj, np.asarray(xj, dtype=float))
    quartic = float(proj.P2Zj @ proj.P2Zj)
    return sigma_e2_hat * quartic / den**2


def _target_result(
    X: np.ndarray,
    Y: np.ndarray,
    j: int,
    init: lasso.LassoFit,
    q_transform: SpectralTransform,
    sigma_e2: float,
    config: DdlConfig,
    seed: int,
) -> tuple[DdlResult, DdlInternals | None]:
    flags: list[str] = []
    if not init.converged:
        flags.append("initial_not_converged")
    try:
        proj = _projection(X, j, config, seed)
        flags.extend(proj.flags)
        xj = X[:, j]
        den = _denominator(proj, xj)
        beta_hat = point_estimate(Y, X, j, init.coef, proj)
        variance = variance_estimate(proj, xj, sigma_e2)
        ci_low, ci_high = confidence_interval(beta_hat, variance, config.alpha)
        if variance > 0:
            p_value = gaussian_two_sided_pvalue(beta_hat / math.sqrt(variance))
        else:
            p_value = 1.0 if beta_hat == 0.0 else 0.0
        result = DdlResult(
            j=j,
            beta_hat=beta_hat,
            variance=variance,
            ci_low=ci_low,
            ci_high=ci_high,
            sigma_e2_hat=sigma_e2,
            p_value=p_value,
            denominator=den,
            lambda_used=init.lambda_used,
            lambda_j_used=proj.lambda_j_used,
            flags=tuple(flags),
        )
        internals = DdlInternals(
            j=j, X=X, Y=Y, q_transform=q_transform, init=init,
            proj=proj, sigma_e2_hat=sigma_e2, denominator=den,
        )
        return result, internals
    except EstimationError as exc:
        kind = "degenerate" if isinstance(exc, DegenerateDenominatorError) else "error"
        flags.append(f"{kind}: {exc}")
        nan = float("nan")
        result = DdlResult(
            j=j, beta_hat=nan, variance=nan, ci_low=nan, ci_high=nan,
            sigma_e2_hat=sigma_e2, p_value=nan, denominator=0.0,
            lambda_used=init.lambda_used, lambda_j_used=nan, flags=tuple(flags),
        )
        return result, None


def fit_detailed(
    X: np.ndarray,
    Y: np.ndarray,
    targets,
    config: DdlConfig | None = None,
    seed: int = 0,
    workers: int = 1,
) -> list[tuple[DdlResult, DdlInternals | None]]:
    """Full pipeline for each target, returning per-target internals too.

    The transform Q and the initial estimate are computed once and shared;
    each target gets its own projection.  Per-target degeneracies are
    recorded in flags without aborting the remaining targets.
    """
    config = config or DdlConfig()
    X, Y = _prepare(X, Y, config)
    n, p = X.shape
    targets = sorted({int(j) for j in targets})
    if any(j < 0 or j >= p for j in targets):
        raise ValueError(f"targets must lie in [0, {p})")
    init, Q = _initial(X, Y, config, seed)
    sigma_e2 = noise_level(X, Y, init.coef, Q)
    if workers > 1 and len(targets) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_target_result, X, Y, j, init, Q, sigma_e2, config, seed)
                for j in targets
            ]
            return [f.result() for f in futures]
    return [_target_result(X, Y, j, init, Q, sigma_e2, config, seed) for j in targets]


def fit(
    X: np.ndarray,
    Y: np.ndarray,
    targets,
    config: DdlConfig | None = None,
    seed: int = 0,
    workers: int = 1,
) -> list[DdlResult]:
    """Doubly debiased Lasso for each target index (0-based)."""
    return [res for res, _ in fit_detailed(X, Y, targets, config, seed, workers)]


def debiased_lasso_baseline(
    X: np.ndarray,
    Y: np.ndarray,
    j: int,
    tuning: CvTuning | TheoryTuning | None = None,
    alpha: float = 0.05,
    center: bool = True,
    solver_tol: float = 1e-7,
    seed: int = 0,
) -> DdlResult:
    """Standard debiased Lasso: the same pipeline with identity transforms."""
    config = DdlConfig(
        alpha=alpha,
        tuning=tuning or CvTuning(),
        transform="identity",
        proj_transform="identity",
        center=center,
        solver_tol=solver_tol,
    )
    return fit(X, Y, [j], config, seed)[0]
