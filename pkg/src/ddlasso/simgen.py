"""Seeded generation of confounded linear-model data with exact ground truth.

Data follow  X = H Psi + E,  Y = X beta + H phi + e  with q latent variables
H acting densely on the p covariates.  Marginalizing out H perturbs the
regression coefficient from beta to beta + b with b = Sigma_X^{-1} Psi^T phi;
every sampled dataset carries b, the per-coordinate residual sd sigma_j and
all latent pieces, so bias and coverage can be accounted exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular, toeplitz

from .errors import NotPositiveDefiniteError, SingularSystemError

COV_KINDS = ("identity", "toeplitz", "equicorrelation")
LOADING_KINDS = ("dense", "sparse", "decay")
DISTRIBUTIONS = ("gaussian", "chi2_1", "t5", "bin16")
MODES = ("confounded", "no_bias", "measurement_error", "unconfounded")


@dataclass(eq=False)
class Scenario:
    """Full generative specification of one simulation setting."""

    n: int
    p: int
    q: int = 3
    beta: np.ndarray | None = None  # default: first 5 entries equal to 1
    sigma_e: float = 1.0
    cov_kind: str = "identity"
    cov_kappa: float = 0.0
    loadings_kind: str = "dense"
    loadings_frac: float = 1.0
    loadings_decay: float = 1.0
    dist: str = "gaussian"
    mode: str = "confounded"

    def __post_init__(self):
        if self.beta is None:
            beta = np.zeros(self.p)
            beta[: min(5, self.p)] = 1.0
            self.beta = beta
        else:
            self.beta = np.asarray(self.beta, dtype=float)
        self.validate()

    def validate(self) -> None:
        if self.n < 1 or self.p < 1 or self.q < 0:
            raise ValueError("n, p must be >= 1 and q >= 0")
        if self.beta.shape != (self.p,):
            raise ValueError(f"beta must have length p={self.p}")
        if self.sigma_e < 0:
            raise ValueError("sigma_e must be >= 0")
        if self.cov_kind not in COV_KINDS:
            raise ValueError(f"unknown covariance kind {self.cov_kind!r}")
        if not 0.0 <= self.cov_kappa < 1.0:
            raise ValueError("kappa must lie in [0, 1)")
        if self.loadings_kind not in LOADING_KINDS:
            raise ValueError(f"unknown loadings kind {self.loadings_kind!r}")
        if not 0.0 < self.loadings_frac <= 1.0:
            raise ValueError("loadings fraction must lie in (0, 1]")
        if self.loadings_decay < 1.0:
            raise ValueError("loadings decay exponent must be >= 1")
        if self.dist not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.dist!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "unconfounded" and self.q != 0:
            raise ValueError("unconfounded mode requires q = 0")

    def to_dict(self) -> dict:
        cov: dict = {"kind": self.cov_kind}
        if self.cov_kind != "identity":
            cov["kappa"] = self.cov_kappa
        loadings: dict = {"kind": self.loadings_kind}
        if self.loadings_kind == "sparse":
            loadings["frac"] = self.loadings_frac
        elif self.loadings_kind == "decay":
            loadings["a"] = self.loadings_decay
        return {
            "n": self.n,
            "p": self.p,
            "q": self.q,
            "beta": [float(v) for v in self.beta],
            "sigma_e": self.sigma_e,
            "cov": cov,
            "loadings": loadings,
            "dist": self.dist,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        allowed = {"n", "p", "q", "beta", "sigma_e", "cov", "loadings", "dist", "mode"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        kwargs: dict = {}
        for key in ("n", "p", "q"):
            if key in doc:
                kwargs[key] = int(doc[key])
        if doc.get("beta") is not None:
            kwargs["beta"] = np.asarray(doc["beta"], dtype=float)
        if "sigma_e" in doc:
            kwargs["sigma_e"] = float(doc["sigma_e"])
        cov = doc.get("cov", {})
        if cov:
            extra = set(cov) - {"kind", "kappa"}
            if extra:
                raise ValueError(f"unknown covariance keys: {sorted(extra)}")
            kwargs["cov_kind"] = cov.get("kind", "identity")
            kwargs["cov_kappa"] = float(cov.get("kappa", 0.0))
        loadings = doc.get("loadings", {})
        if loadings:
            extra = set(loadings) - {"kind", "frac", "a"}
            if extra:
                raise ValueError(f"unknown loadings keys: {sorted(extra)}")
            kwargs["loadings_kind"] = loadings.get("kind", "dense")
            kwargs["loadings_frac"] = float(loadings.get("frac", 1.0))
            kwargs["loadings_decay"] = float(loadings.get("a", 1.0))
        if "dist" in doc:
            kwargs["dist"] = doc["dist"]
        if "mode" in doc:
            kwargs["mode"] = doc["mode"]
        return cls(**kwargs)


@dataclass(eq=False)
class GroundTruth:
    """Latent pieces of one sampled dataset.

    ``b`` is the effective coefficient perturbation entering bias accounting
    (zero in no_bias and unconfounded modes); ``b_raw`` is the perturbation
    induced by (Psi, phi) before any adjustment.  ``phi`` is the vector in
    the representation Y = X beta + H phi + e (- X b_raw in no_bias mode);
    for the measurement-error mode it equals -Psi @ beta.
    """

    beta: np.ndarray
    b: np.ndarray
    b_raw: np.ndarray
    sigma_j: np.ndarray
    H: np.ndarray
    E: np.ndarray
    e: np.ndarray
    Psi: np.ndarray
    phi: np.ndarray


@dataclass(eq=False)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    truth: GroundTruth
    scenario: Scenario


@lru_cache(maxsize=8)
def _covariance_factor_cached(kind: str, p: int, kappa: float) -> np.ndarray | None:
    if kind == "identity" or kappa == 0.0:
        return None  # factor is the identity
    if kind == "toeplitz":
        # AR(1): closed-form Cholesky, L[i,0] = kappa^i, L[i,j>=1] = kappa^(i-j) * sqrt(1-kappa^2)
        powers = kappa ** np.arange(p, dtype=float)
        L = np.tril(toeplitz(powers))
        L[:, 1:] *= np.sqrt(1.0 - kappa**2)
        L.setflags(write=False)
        return L
    if kind == "equicorrelation":
        sigma = np.full((p, p), kappa)
        np.fill_diagonal(sigma, 1.0)
        try:
            L = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(str(exc)) from exc
        L.setflags(write=False)
        return L
    raise ValueError(f"unknown covariance kind {kind!r}")


def make_covariance(kind: str, p: int, kappa: float = 0.0) -> np.ndarray:
    """Lower-triangular Cholesky factor of the covariance model.

    Sampling uses E = Z @ L.T with Z holding i.i.d. standardized draws.
    """
    if kind not in COV_KINDS:
        raise ValueError(f"unknown covariance kind {kind!r}")
    if not 0.0 <= kappa < 1.0:
        raise NotPositiveDefiniteError(f"kappa must lie in [0, 1), got {kappa}")
    L = _covariance_factor_cached(kind, p, float(kappa))
    return np.eye(p) if L is None else L


def precision_diagonal(kind: str, p: int, kappa: float = 0.0) -> np.ndarray:
    """Diagonal of the inverse covariance, in closed form per model."""
    if not 0.0 <= kappa < 1.0:
        raise NotPositiveDefiniteError(f"kappa must lie in [0, 1), got {kappa}")
    if kind == "identity" or kappa == 0.0 or p == 1:
        return np.ones(p)
    if kind == "toeplitz":
        diag = np.full(p, (1.0 + kappa**2) / (1.0 - kappa**2))
        diag[0] = diag[-1] = 1.0 / (1.0 - kappa**2)
        return diag
    if kind == "equicorrelation":
        value = (1.0 + (p - 2) * kappa) / ((1.0 - kappa) * (1.0 + (p - 1) * kappa))
        return np.full(p, value)
    raise ValueError(f"unknown covariance kind {kind!r}")


def _standardized(rng: np.random.Generator, dist: str, shape) -> np.ndarray:
    """Zero-mean unit-variance draws of the requested shape."""
    if dist == "gaussian":
        return rng.standard_normal(shape)
    if dist == "chi2_1":
        return (rng.chisquare(1, shape) - 1.0) / np.sqrt(2.0)
    if dist == "t5":
        return rng.standard_t(5, shape) / np.sqrt(5.0 / 3.0)
    if dist == "bin16":
        return (rng.binomial(16, 0.5, shape) - 8.0) / 2.0
    raise ValueError(f"unknown distribution {dist!r}")


def standardized_sampler(dist: str, seed):
    """Stream of standardized draws: call with a shape to get an array."""
    rng = np.random.default_rng(seed)

    def draw(*shape) -> np.ndarray:
        return _standardized(rng, dist, shape)

    return draw


def make_loadings(
    q: int,
    p: int,
    kind: str = "dense",
    seed=0,
    frac: float = 1.0,
    decay: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Confounder loading matrix Psi (q x p) and response loadings phi (q,).

    kinds: "dense" (i.i.d. standard normal), "sparse" (a uniformly random
    share 1-frac of each row zeroed), "decay" (row entries scaled so the
    column of per-row random rank r has variance r^-decay).
    """
    if q < 0:
        raise ValueError("q must be >= 0")
    if kind not in LOADING_KINDS:
        raise ValueError(f"unknown loadings kind {kind!r}")
    rng = np.random.default_rng(seed)
    Psi = rng.standard_normal((q, p))
    if kind == "sparse" and q > 0:
        keep = int(round(frac * p))
        for i in range(q):
            dead = rng.choice(p, size=p - keep, replace=False)
            Psi[i, dead] = 0.0
    elif kind == "decay" and q > 0:
        for i in range(q):
            perm = rng.permutation(p)
            ranks = np.empty(p)
            ranks[perm] = np.arange(1, p + 1)
            Psi[i] *= ranks ** (-decay / 2.0)
    phi = rng.standard_normal(q)
    return Psi, phi


def true_perturbation(
    Psi: np.ndarray, phi: np.ndarray, cov_factor: np.ndarray | None = None
) -> np.ndarray:
    """Solve (Sigma_E + Psi^T Psi) b = Psi^T phi through the q x q system.

    cov_factor is the lower Cholesky factor of Sigma_E (None for identity).
    """
    Psi = np.asarray(Psi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    q, p = Psi.shape
    if q == 0:
        return np.zeros(p)
    if cov_factor is None:
        SinvPsiT = Psi.T
    else:
        half = solve_triangular(cov_factor, Psi.T, lower=True)
        SinvPsiT = solve_triangular(cov_factor.T, half, lower=False)
    u = SinvPsiT @ phi
    K = np.eye(q) + Psi @ SinvPsiT
    try:
        correction = np.linalg.solve(K, Psi @ u)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    b = u - SinvPsiT @ correction
    target = Psi.T @ phi
    if cov_factor is None:
        sigma_b = b
    else:
        sigma_b = cov_factor @ (cov_factor.T @ b)
    resid = sigma_b + Psi.T @ (Psi @ b) - target
    bound = 1e-8 * max(float(np.linalg.norm(target)), 1e-300)
    if float(np.linalg.norm(resid)) > bound:
        raise SingularSystemError(
            f"perturbation solve residual {float(np.linalg.norm(resid)):.3e} exceeds bound"
        )
    return b


def sample_dataset(scenario: Scenario, seed) -> Dataset:
    """Draw one dataset; identical (scenario, seed) give identical bytes.

    The loadings and the data draws use independent child streams of the
    seed, in a fixed order.
    """
    sc = scenario
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    load_ss, draw_ss = ss.spawn(2)
    Psi, phi = make_loadings(
        sc.q, sc.p, sc.loadings_kind, load_ss, frac=sc.loadings_frac, decay=sc.loadings_decay
    )
    rng = np.random.default_rng(draw_ss)
    H = _standardized(rng, sc.dist, (sc.n, sc.q))
    Z = _standardized(rng, sc.dist, (sc.n, sc.p))
    e = sc.sigma_e * _standardized(rng, sc.dist, (sc.n,))
    L = _covariance_factor_cached(sc.cov_kind, sc.p, float(sc.cov_kappa))
    E = Z if L is None else Z @ L.T
    sigma_j = 1.0 / np.sqrt(precision_diagonal(sc.cov_kind, sc.p, sc.cov_kappa))

    if sc.mode == "unconfounded":
        X = E
        Y = X @ sc.beta + e
        zeros = np.zeros(sc.p)
        truth = GroundTruth(sc.beta.copy(), zeros, zeros.copy(), sigma_j, H, E, e, Psi, phi)
        return Dataset(X=X, Y=Y, truth=truth, scenario=sc)

    if sc.mode == "measurement_error":
        X0 = E
        X = X0 + H @ Psi
        Y = X0 @ sc.beta + e
        phi_eff = -(Psi @ sc.beta)
        b = true_perturbation(Psi, phi_eff, L)
        truth = GroundTruth(sc.beta.copy(), b, b.copy(), sigma_j, H, X0, e, Psi, phi_eff)
        return Dataset(X=X, Y=Y, truth=truth, scenario=sc)

    X = H @ Psi + E
    Y = X @ sc.beta + H @ phi + e
    b_raw = true_perturbation(Psi, phi, L)
    if sc.mode == "no_bias":
        Y = Y - X @ b_raw
        b = np.zeros(sc.p)
    else:
        b = b_raw.copy()
    truth = GroundTruth(sc.beta.copy(), b, b_raw, sigma_j, H, E, e, Psi, phi)
    return Dataset(X=X, Y=Y, truth=truth, scenario=sc)
