"""Synthetic paired-trait studies with known genetic relatedness.

Covariate rows are drawn from N(0, Sigma) through a Cholesky factor. Every row
has its own counter-based random stream keyed on ``(seed, stream, row)``, so a
study is reproducible regardless of the order rows are generated in.

In genotype mode each latent Gaussian coordinate is cut at its quartiles into
{0, 1, 2} (frequencies 1/4, 1/2, 1/4) and centred at 1. The covariance that
defines the true functionals is then the covariance of the thresholded
variables, computed from the latent correlations by

    Cov(1[U > s], 1[V > t]) = integral_0^rho phi_2(s, t; r) dr,

summed over the two thresholds of each coordinate.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from .core import PairedStudy, Scenario, expit

_QUARTILE = 0.6744897501960817  # Phi^{-1}(0.75)

COEF_STREAM, X_STREAM, Z_STREAM = 0, 1, 2


class SigmaKind(str, enum.Enum):
    BLOCK_TOEPLITZ = "block_toeplitz"
    EXCHANGEABLE = "exchangeable"
    AR1 = "ar1"
    IDENTITY = "identity"
    CUSTOM = "custom"


class ConstraintInfeasibleError(RuntimeError):
    pass


def sigma_block_toeplitz(p: int, blocks: int = 10) -> np.ndarray:
    """Block-diagonal matrix of identical unit-diagonal Toeplitz blocks.

    Block size is ``b = ceil(p / blocks)``; a trailing block may be smaller and
    is the leading principal submatrix of a full block. Within a block the
    entry at lag ``d`` is ``3 (b - 1 - d) / (10 (b - 1))``, descending from
    roughly 0.3 at lag 1 to 0 at lag ``b - 1``.
    """
    if blocks < 1 or p < blocks:
        raise ValueError(f"need p >= blocks >= 1, got p={p}, blocks={blocks}")
    b = -(-p // blocks)
    if b < 2:
        raise ValueError(f"block size {b} is degenerate; need at least 2")
    lags = np.abs(np.subtract.outer(np.arange(b), np.arange(b)))
    block = 3.0 * (b - 1 - lags) / (10.0 * (b - 1))
    np.fill_diagonal(block, 1.0)
    S = np.zeros((p, p))
    for start in range(0, p, b):
        size = min(b, p - start)
        S[start:start + size, start:start + size] = block[:size, :size]
    return S


def sigma_exchangeable(p: int, rho: float = 0.2) -> np.ndarray:
    lower = -1.0 / (p - 1) if p > 1 else -math.inf
    if not lower < rho < 1.0:
        raise ValueError(f"rho={rho} is outside the positive-definite range ({lower:.4g}, 1)")
    S = np.full((p, p), float(rho))
    np.fill_diagonal(S, 1.0)
    return S


def sigma_ar1(p: int, rho: float) -> np.ndarray:
    if not -1.0 < rho < 1.0:
        raise ValueError("AR(1) correlation must lie in (-1, 1)")
    idx = np.arange(p)
    return float(rho) ** np.abs(np.subtract.outer(idx, idx))


@dataclass(frozen=True)
class SimDesign:
    n1: int = 400
    n2: int = 400
    p: int = 700
    m: int = 0
    sigma_kind: SigmaKind = SigmaKind.BLOCK_TOEPLITZ
    rho: float = 0.2
    blocks: int = 10
    custom_sigma: np.ndarray | None = field(default=None, repr=False, compare=False)
    k: int = 25
    effect_range: tuple = (-1.0, 1.0)
    shared_support: int | None = None  # defaults to k (common support)
    intercepts: tuple = (0.0, 0.0)
    cov_floor: float | None = None
    genotype_mode: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sigma_kind", SigmaKind(self.sigma_kind))
        object.__setattr__(self, "effect_range", tuple(float(v) for v in self.effect_range))
        object.__setattr__(self, "intercepts", tuple(float(v) for v in self.intercepts))
        if self.shared_support is None:
            object.__setattr__(self, "shared_support", self.k)
        if not 0 <= self.k <= self.p:
            raise ValueError(f"sparsity k={self.k} must lie in [0, p={self.p}]")
        if not 0 <= self.shared_support <= self.k:
            raise ValueError("shared_support must lie in [0, k]")
        if 2 * self.k - self.shared_support > self.p:
            raise ValueError("supports do not fit in p coordinates")
        if self.cov_floor is not None and self.cov_floor < 0:
            raise ValueError("cov_floor must be non-negative")
        if not 0 <= self.m <= min(self.n1, self.n2):
            raise ValueError("overlap m must lie in [0, min(n1, n2)]")
        lo, hi = self.effect_range
        if not lo <= hi:
            raise ValueError("effect_range must be an interval")
        if self.sigma_kind is SigmaKind.CUSTOM and self.custom_sigma is None:
            raise ValueError("custom sigma_kind needs custom_sigma")

    @property
    def scenario(self) -> Scenario:
        return Scenario.OVERLAPPED if self.m > 0 else Scenario.INDEPENDENT

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__ if f != "custom_sigma"}
        d["sigma_kind"] = self.sigma_kind.value
        d["effect_range"] = list(self.effect_range)
        d["intercepts"] = list(self.intercepts)
        if self.custom_sigma is not None:
            d["custom_sigma"] = np.asarray(self.custom_sigma).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimDesign":
        d = dict(d)
        if d.get("custom_sigma") is not None:
            d["custom_sigma"] = np.asarray(d["custom_sigma"], dtype=float)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown design fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TrueParams:
    beta: np.ndarray
    gamma: np.ndarray
    sigma: np.ndarray = field(repr=False)
    cov_yw: float
    var_y: float
    var_w: float
    corr: float
    u_norm: float
    l_norm: float

    def functionals(self) -> dict:
        return {"covariance": self.cov_yw, "variance_y": self.var_y,
                "variance_w": self.var_w, "correlation": self.corr}

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "gamma": self.gamma.tolist(),
                **self.functionals(), "u_norm": self.u_norm, "l_norm": self.l_norm}


@functools.lru_cache(maxsize=16)
def _structured_sigma(kind: SigmaKind, p: int, rho: float, blocks: int) -> np.ndarray:
    if kind is SigmaKind.BLOCK_TOEPLITZ:
        S = sigma_block_toeplitz(p, blocks)
    elif kind is SigmaKind.EXCHANGEABLE:
        S = sigma_exchangeable(p, rho)
    elif kind is SigmaKind.AR1:
        S = sigma_ar1(p, rho)
    else:
        S = np.eye(p)
    S.setflags(write=False)
    return S


def latent_sigma(design: SimDesign) -> np.ndarray:
    if design.sigma_kind is SigmaKind.CUSTOM:
        S = np.asarray(design.custom_sigma, dtype=float)
        if S.shape != (design.p, design.p) or not np.allclose(S, S.T):
            raise ValueError("custom sigma must be a symmetric p x p matrix")
        return S
    return _structured_sigma(design.sigma_kind, design.p, float(design.rho), design.blocks)


@functools.lru_cache(maxsize=16)
def _cholesky_cached(kind, p, rho, blocks):
    return _cholesky(_structured_sigma(kind, p, rho, blocks))


def _cholesky(S):
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("covariance matrix is not positive definite") from exc
    L.setflags(write=False)
    return L


def _latent_factor(design: SimDesign):
    if design.sigma_kind is SigmaKind.CUSTOM:
        return _cholesky(latent_sigma(design))
    return _cholesky_cached(design.sigma_kind, design.p, float(design.rho), design.blocks)


def _bvn_density(r, s, t):
    q = 1.0 - r * r
    return math.exp(-(s * s - 2.0 * r * s * t + t * t) / (2.0 * q)) / (2.0 * math.pi * math.sqrt(q))


def genotype_covariance_from_correlation(rho: float) -> float:
    """Covariance of two quartile-thresholded genotypes with latent correlation rho."""
    if rho == 0.0:
        return 0.0
    if abs(rho) >= 1.0:
        if rho > 0:
            return 0.5
        rho = math.copysign(1.0 - 1e-15, rho)
    c = _QUARTILE
    total = 0.0
    for s in (-c, c):
        for t in (-c, c):
            val, _ = integrate.quad(_bvn_density, 0.0, rho, args=(s, t),
                                    epsabs=1e-14, epsrel=1e-12, limit=200)
            total += val
    return total


def genotype_sigma(latent: np.ndarray) -> np.ndarray:
    """Covariance matrix of the centred {0,1,2} genotypes."""
    d = np.sqrt(np.diag(latent))
    R = latent / np.outer(d, d)
    rounded = np.round(R, 14)
    vals, inv = np.unique(rounded, return_inverse=True)
    mapped = np.array([genotype_covariance_from_correlation(float(v)) for v in vals])
    G = mapped[inv].reshape(R.shape)
    np.fill_diagonal(G, 0.5)
    return 0.5 * (G + G.T)


@functools.lru_cache(maxsize=8)
def _genotype_sigma_cached(kind, p, rho, blocks):
    G = genotype_sigma(_structured_sigma(kind, p, rho, blocks))
    G.setflags(write=False)
    return G


def true_sigma(design: SimDesign) -> np.ndarray:
    """Covariance of the covariates actually handed to the estimators."""
    if not design.genotype_mode:
        return latent_sigma(design)
    if design.sigma_kind is SigmaKind.CUSTOM:
        return genotype_sigma(latent_sigma(design))
    return _genotype_sigma_cached(design.sigma_kind, design.p, float(design.rho), design.blocks)


def draw_coefficients(design: SimDesign, rng: np.random.Generator, sigma=None, max_attempts=100_000):
    """Two k-sparse effect vectors.

    Supports are drawn uniformly without replacement with exactly
    ``shared_support`` common coordinates; nonzero values are i.i.d. uniform on
    ``effect_range``. With ``cov_floor`` set, redraws until
    ``|beta' Sigma gamma| > cov_floor``.

    Returns
    -------
    beta, gamma, (support_beta, support_gamma)
    """
    p, k, s = design.p, design.k, design.shared_support
    lo, hi = design.effect_range
    if sigma is None:
        sigma = true_sigma(design)
    for _ in range(max_attempts):
        beta, gamma = np.zeros(p), np.zeros(p)
        sb = np.sort(rng.choice(p, size=k, replace=False)) if k else np.array([], dtype=int)
        shared = rng.choice(sb, size=s, replace=False) if s else np.array([], dtype=int)
        rest = np.setdiff1d(np.arange(p), sb)
        own = rng.choice(rest, size=k - s, replace=False) if k - s else np.array([], dtype=int)
        sg = np.sort(np.concatenate([shared, own]).astype(int))
        beta[sb] = rng.uniform(lo, hi, size=k)
        gamma[sg] = rng.uniform(lo, hi, size=k)
        if design.cov_floor is None:
            return beta, gamma, (sb, sg)
        cov = float(beta[sb] @ sigma[np.ix_(sb, sg)] @ gamma[sg]) if k else 0.0
        if abs(cov) > design.cov_floor:
            return beta, gamma, (sb, sg)
    raise ConstraintInfeasibleError(
        f"no coefficient draw met |beta' Sigma gamma| > {design.cov_floor} "
        f"in {max_attempts} attempts")


def _row_rng(seed: int, stream: int, row: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, row])))


def true_params(beta, gamma, sigma) -> TrueParams:
    cov = float(beta @ sigma @ gamma)
    vy = float(beta @ sigma @ beta)
    vw = float(gamma @ sigma @ gamma)
    prod = vy * vw
    corr = 0.0 if not prod > 0 else max(-1.0, min(1.0, cov / math.sqrt(prod)))
    nb, ng = float(np.linalg.norm(beta)), float(np.linalg.norm(gamma))
    return TrueParams(beta, gamma, sigma, cov, vy, vw, corr, max(nb, ng), min(nb, ng))


def sample_study(design: SimDesign, beta=None, gamma=None):
    """Draw one study and its exact true parameters.

    ``beta``/``gamma`` may be supplied to hold the coefficients fixed; otherwise
    they come from the design's coefficient stream.
    """
    sigma = true_sigma(design)
    if beta is None or gamma is None:
        coef_rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence([design.seed, COEF_STREAM])))
        beta, gamma, _ = draw_coefficients(design, coef_rng, sigma)
    L = _latent_factor(design)
    p, m = design.p, design.m
    scale = np.sqrt(np.diag(latent_sigma(design)))

    def rows(stream, n, start, n_uniform):
        normals = np.empty((n - start, p))
        unif = np.empty((n - start, n_uniform))
        for i in range(start, n):
            g = _row_rng(design.seed, stream, i)
            normals[i - start] = g.standard_normal(p)
            unif[i - start] = g.random(n_uniform)
        latent = normals @ L.T
        if design.genotype_mode:
            z = latent / scale
            latent = (z > -_QUARTILE).astype(float) + (z > _QUARTILE) - 1.0
        return latent, unif

    X, ux = rows(X_STREAM, design.n1, 0, 2)
    Zrest, uz = rows(Z_STREAM, design.n2, m, 1)
    Z = np.vstack([X[:m], Zrest])
    a, z0 = design.intercepts
    y = (ux[:, 0] < expit(a + X @ beta)).astype(float)
    u_w = np.concatenate([ux[:m, 1], uz[:, 0]])
    w = (u_w < expit(z0 + Z @ gamma)).astype(float)
    study = PairedStudy(X, y, Z, w, m=m, scenario=design.scenario)
    return study, true_params(beta, gamma, sigma)


def with_seed(design: SimDesign, seed: int) -> SimDesign:
    return replace(design, seed=int(seed))
