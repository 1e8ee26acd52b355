"""Singular value shrinkage transforms.

A shrinkage transform is a symmetric n x n operator P = I - U diag(1 - S) U^T
built from the thin SVD of a design matrix: it rescales the singular values of
the matrix it was built from by factors S in [0, 1] and acts as the identity
on the orthogonal complement of col(U).  Transforms are kept in factored form;
the dense n x n matrix is never materialized here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    ConvergenceFailureError,
    DimensionMismatchError,
    IndexOutOfRangeError,
    NonFiniteError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD X = U diag(s) V^T with s sorted nonincreasing.

    U is n x m and V is d x m with orthonormal columns, m = min(n, d).
    """

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def d(self) -> int:
        return self.V.shape[0]

    @property
    def m(self) -> int:
        return self.s.shape[0]


def svd_thin(X: np.ndarray) -> SvdFactors:
    """Thin SVD of a rectangular matrix.

    Raises
    ------
    NonFiniteError
        If X contains NaN or Inf.
    ConvergenceFailureError
        If the LAPACK backend fails to converge.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise DimensionMismatchError(f"expected a nonempty 2-d array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("input matrix contains NaN or Inf")
    try:
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailureError(f"SVD backend failed: {exc}") from exc
    return SvdFactors(U=U, s=s, V=Vt.T)


@dataclass(frozen=True)
class SpectralTransform:
    """Factored symmetric operator P = I_n - U diag(1 - shrink) U^T.

    ``shrink`` holds the per-direction scale factors in [0, 1]; ``sv`` keeps
    the singular values the transform was built from (used by diagnostics).
    All eigenvalues of P lie in [0, 1]: ``shrink`` on col(U), 1 on the
    complement.
    """

    U: np.ndarray
    shrink: np.ndarray
    sv: np.ndarray
    kind: str  # "trim" | "pca" | "identity"
    param: float | int | None = None

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def m(self) -> int:
        return self.shrink.shape[0]

    def apply(self, M: np.ndarray, power: int = 1) -> np.ndarray:
        """Return P^power @ M without forming the n x n operator.

        Accepts an (n,) vector or an (n, d) matrix.
        """
        if power < 1:
            raise ValueError("power must be >= 1")
        M = np.asarray(M, dtype=float)
        if M.shape[0] != self.n:
            raise DimensionMismatchError(
                f"row dimension {M.shape[0]} does not match transform size {self.n}"
            )
        delta = 1.0 - self.shrink**power
        if not np.any(delta):
            return M.copy()
        if M.ndim == 1:
            return M - self.U @ (delta * (self.U.T @ M))
        return M - self.U @ (delta[:, None] * (self.U.T @ M))

    def trace_power(self, k: int) -> float:
        """Tr(P^k) = sum(shrink^k) plus one per complement dimension."""
        if k < 1:
            raise ValueError("k must be >= 1")
        return float(np.sum(self.shrink**k) + (self.n - self.m))


def identity_transform(n: int) -> SpectralTransform:
    """The n x n identity as a (trivially factored) transform."""
    return SpectralTransform(
        U=np.zeros((n, 0)),
        shrink=np.zeros(0),
        sv=np.zeros(0),
        kind="identity",
    )


def trim_transform(svd: SvdFactors, rho: float) -> SpectralTransform:
    """Cap the top floor(rho * m) singular values at the rho-quantile value.

    With t = floor(rho * m) and tau = s_t, directions l <= t get factor
    tau / s_l (capped at 1) and the rest are untouched.  t = 0 yields the
    identity; a rank-deficient quantile (tau = 0) annihilates the leading
    directions.  Zero singular values always keep factor 1.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    m = svd.m
    t = int(np.floor(rho * m))
    shrink = np.ones(m)
    if t == 0:
        logger.info("trim quantile index is 0 (rho=%g, m=%d): identity transform", rho, m)
    else:
        tau = svd.s[t - 1]
        positive = svd.s > 0
        head = np.arange(m) < t
        if tau == 0.0:
            logger.warning("trim threshold is 0 (rank-deficient quantile): zeroing top %d directions", t)
            shrink[head & positive] = 0.0
        else:
            shrink[head & positive] = np.minimum(tau / svd.s[head & positive], 1.0)
    return SpectralTransform(U=svd.U, shrink=shrink, sv=svd.s.copy(), kind="trim", param=float(rho))


def pca_adjust(svd: SvdFactors, q_hat: int) -> SpectralTransform:
    """Zero out the top q_hat singular directions, keep the rest intact."""
    if q_hat < 0 or q_hat > svd.m:
        raise IndexOutOfRangeError(f"q_hat must lie in [0, {svd.m}], got {q_hat}")
    shrink = np.ones(svd.m)
    shrink[:q_hat] = 0.0
    return SpectralTransform(U=svd.U, shrink=shrink, sv=svd.s.copy(), kind="pca", param=int(q_hat))


@dataclass(frozen=True)
class P1Diagnostics:
    """Operator-norm and trace diagnostics of a shrinkage transform.

    ``op_norm_ratio`` is ||P X||_2^2 / max(n, d); ``trace4_ratio`` is
    Tr(P^4) / m.  A transform is usable for inference when the first stays
    bounded by a small constant and the second stays away from zero.
    """

    op_norm_ratio: float
    trace4_ratio: float
    trace2: float
    trace4: float
    op_norm_ok: bool
    trace4_ok: bool

    @property
    def ok(self) -> bool:
        return self.op_norm_ok and self.trace4_ok


def _default_trace4_floor(T: SpectralTransform) -> float:
    if T.kind == "trim":
        return 1.0 - float(T.param)
    if T.kind == "pca":
        return (T.m - int(T.param)) / T.m if T.m else 1.0
    return 1.0


def check_p1(
    T: SpectralTransform,
    X: np.ndarray,
    max_op_norm_ratio: float = 4.0,
    min_trace4_ratio: float | None = None,
) -> P1Diagnostics:
    """Evaluate the shrinkage-quality diagnostics of T against a matrix X.

    ``min_trace4_ratio`` defaults to the floor implied by the transform kind
    (1 - rho for a trim, (m - q_hat)/m for a PCA adjustment, 1 for identity).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != T.n:
        raise DimensionMismatchError(
            f"X must be 2-d with {T.n} rows, got shape {X.shape}"
        )
    n, d = X.shape
    PX = T.apply(X)
    top_sv = float(np.linalg.svd(PX, compute_uv=False)[0]) if min(n, d) else 0.0
    op_norm_ratio = top_sv**2 / max(n, d)
    m = min(n, d)
    trace2 = T.trace_power(2)
    trace4 = T.trace_power(4)
    trace4_ratio = trace4 / m
    floor = _default_trace4_floor(T) if min_trace4_ratio is None else min_trace4_ratio
    return P1Diagnostics(
        op_norm_ratio=op_norm_ratio,
        trace4_ratio=trace4_ratio,
        trace2=trace2,
        trace4=trace4,
        op_norm_ok=op_norm_ratio <= max_op_norm_ratio,
        trace4_ok=trace4_ratio >= floor,
    )


class Spectrum(NamedTuple):
    values: np.ndarray
    quantile_index: int | None  # 0-based index of the floor(rho*m) quantile
    quantile_value: float | None


def singular_spectrum(X: np.ndarray, rho: float | None = None) -> Spectrum:
    """Sorted singular values of X for scree diagnostics.

    When ``rho`` is given, also reports the floor(rho * m) quantile entry
    (the trim threshold tau); both are None when the index is 0.
    """
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("input matrix contains NaN or Inf")
    values = np.linalg.svd(X, compute_uv=False)
    if rho is None:
        return Spectrum(values, None, None)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    t = int(np.floor(rho * len(values)))
    if t == 0:
        return Spectrum(values, None, None)
    return Spectrum(values, t - 1, float(values[t - 1]))
