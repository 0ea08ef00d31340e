"""L1-penalized logistic / linear regression with a penalized intercept.

Solves

    (1/n) sum_i loss(y_i, a + x_i'b) + lam * (||b||_1 + |a|)

by an IRLS outer loop (quadratic majorization of the log-likelihood) with
cyclic coordinate descent on an active set inside. Each outer step is
backtracked so the penalized objective never increases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import LinkKind

WEIGHT_FLOOR = 1e-5


class DivergingInterceptError(ValueError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 1000
    objective_tolerance: float = 1e-9
    kkt_tolerance: float = 1e-6
    penalize_intercept: bool = True
    link: LinkKind = LinkKind.LOGISTIC

    def __post_init__(self):
        object.__setattr__(self, "link", LinkKind(self.link))
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.objective_tolerance <= 0 or self.kkt_tolerance <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class FixedC:
    C: float = 0.12

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")


@dataclass(frozen=True)
class CrossValidate:
    grid: tuple = (0.04, 0.08, 0.12, 0.16, 0.20, 0.24, 0.28, 0.32, 0.36, 0.40)
    folds: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(c) for c in self.grid))
        if not self.grid or min(self.grid) <= 0:
            raise ValueError("grid values must be positive")
        if self.folds < 2:
            raise ValueError("need at least two folds")


@dataclass(frozen=True)
class LassoFit:
    intercept: float
    coefficients: np.ndarray
    lam: float
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float = math.nan
    objective_path: tuple = field(default=(), repr=False)

    @property
    def support(self):
        return np.flatnonzero(self.coefficients)

    def linear_predictor(self, M):
        return self.intercept + np.asarray(M, dtype=float) @ self.coefficients


def soft_threshold(z: float, t: float) -> float:
    if t < 0:
        raise ValueError("threshold must be non-negative")
    return math.copysign(max(abs(z) - t, 0.0), z) if abs(z) > t else 0.0


def lambda_from_constant(C: float, n: int, p: int) -> float:
    """Penalty level C * sqrt(log(p) / n)."""
    if p < 2:
        raise ValueError("p must be at least 2")
    if n < 1 or C <= 0:
        raise ValueError("need C > 0 and n >= 1")
    return C * math.sqrt(math.log(p) / n)


# -- numba kernels -----------------------------------------------------------


@njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True)
def _expit(e):
    if e >= 0:
        return 1.0 / (1.0 + math.exp(-e))
    x = math.exp(e)
    return x / (1.0 + x)


@njit(cache=True)
def _log1pexp(e):
    if e > 0:
        return e + math.log1p(math.exp(-e))
    return math.log1p(math.exp(e))


@njit(cache=True)
def _objective(eta, y, a, b, lam, logistic, pen_a):
    n = eta.shape[0]
    s = 0.0
    if logistic:
        for i in range(n):
            s += _log1pexp(eta[i]) - y[i] * eta[i]
        s /= n
    else:
        for i in range(n):
            r = y[i] - eta[i]
            s += r * r
        s /= 2.0 * n
    pen = 0.0
    for j in range(b.shape[0]):
        pen += abs(b[j])
    if pen_a:
        pen += abs(a)
    return s + lam * pen


@njit(cache=True)
def _kkt(X, y, eta, a, b, lam, logistic, pen_a):
    n, p = X.shape
    resid = np.empty(n)
    for i in range(n):
        mu = _expit(eta[i]) if logistic else eta[i]
        resid[i] = mu - y[i]
    worst = 0.0
    g = 0.0
    for i in range(n):
        g += resid[i]
    g /= n
    if pen_a:
        if a != 0.0:
            v = abs(g + lam * (1.0 if a > 0 else -1.0))
        else:
            v = max(abs(g) - lam, 0.0)
    else:
        v = abs(g)
    worst = max(worst, v)
    for j in range(p):
        g = 0.0
        for i in range(n):
            g += resid[i] * X[i, j]
        g /= n
        if b[j] != 0.0:
            v = abs(g + lam * (1.0 if b[j] > 0 else -1.0))
        else:
            v = max(abs(g) - lam, 0.0)
        worst = max(worst, v)
    return worst


@njit(cache=True)
def _cd_quadratic(X, wts, r, a, b, xwx, ww, lam, pen_a, active, tol, max_sweeps):
    """Coordinate descent on (1/2n) sum w_i r_i^2 + lam*penalty.

    ``r`` holds the working residual z - eta and is updated in place, as are
    ``a`` (returned) and ``b``.
    """
    n, p = X.shape
    sweeps = 0
    full = True
    while sweeps < max_sweeps:
        sweeps += 1
        biggest = 0.0
        # intercept
        g = 0.0
        for i in range(n):
            g += wts[i] * r[i]
        g = g / n + ww * a
        new = _soft(g, lam) / ww if pen_a else g / ww
        d = new - a
        if d != 0.0:
            for i in range(n):
                r[i] -= d
            a = new
            biggest = max(biggest, ww * d * d)
        for j in range(p):
            if not full and not active[j]:
                continue
            if xwx[j] <= 0.0:
                continue
            g = 0.0
            for i in range(n):
                g += wts[i] * X[i, j] * r[i]
            g = g / n + xwx[j] * b[j]
            new = _soft(g, lam) / xwx[j]
            d = new - b[j]
            if d != 0.0:
                for i in range(n):
                    r[i] -= d * X[i, j]
                b[j] = new
                biggest = max(biggest, xwx[j] * d * d)
                if new != 0.0:
                    active[j] = True
        if biggest < tol:
            if full:
                break
            # active set converged; confirm with a full sweep
            full = True
        else:
            full = False
    return a, sweeps


@njit(cache=True)
def _solve(X, y, lam, logistic, pen_a, a0, b0, max_outer, obj_tol, kkt_tol, floor):
    n, p = X.shape
    a = a0
    b = b0.copy()
    eta = np.empty(n)
    for i in range(n):
        s = a
        for j in range(p):
            s += X[i, j] * b[j]
        eta[i] = s
    obj = _objective(eta, y, a, b, lam, logistic, pen_a)
    path = np.empty(max_outer + 1)
    path[0] = obj
    active = np.zeros(p, dtype=np.bool_)
    for j in range(p):
        active[j] = b[j] != 0.0
    wts = np.empty(n)
    r = np.empty(n)
    xwx = np.empty(p)
    b_new = np.empty(p)
    eta_new = np.empty(n)
    converged = False
    it = 0
    kkt = _kkt(X, y, eta, a, b, lam, logistic, pen_a)
    if kkt <= kkt_tol:
        converged = True
    inner_tol = 1e-15
    stalls = 0
    while not converged and it < max_outer:
        it += 1
        for i in range(n):
            if logistic:
                mu = _expit(eta[i])
                wi = max(mu * (1.0 - mu), floor)
                wts[i] = wi
                r[i] = (y[i] - mu) / wi
            else:
                wts[i] = 1.0
                r[i] = y[i] - eta[i]
        ww = 0.0
        for i in range(n):
            ww += wts[i]
        ww /= n
        for j in range(p):
            s = 0.0
            for i in range(n):
                s += wts[i] * X[i, j] * X[i, j]
            xwx[j] = s / n
        for j in range(p):
            b_new[j] = b[j]
        # inexact inner solves while far from optimal, exact near the end
        tol_in = min(max(0.01 * kkt * kkt, inner_tol), 1e-6)
        a_new, _ = _cd_quadratic(X, wts, r, a, b_new, xwx, ww, lam, pen_a,
                                 active, tol_in, 100000)
        # backtrack along the proposed direction until the objective drops
        step = 1.0
        accepted = False
        for _ in range(60):
            at = a + step * (a_new - a)
            for i in range(n):
                eta_new[i] = at
            for j in range(p):
                bj = b[j] + step * (b_new[j] - b[j])
                if bj != 0.0:
                    for i in range(n):
                        eta_new[i] += X[i, j] * bj
            bt = b + step * (b_new - b)
            obj_new = _objective(eta_new, y, at, bt, lam, logistic, pen_a)
            if obj_new <= obj:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            path[it] = obj
            kkt = _kkt(X, y, eta, a, b, lam, logistic, pen_a)
            converged = kkt <= kkt_tol
            break
        a = at
        for j in range(p):
            b[j] = bt[j]
        for i in range(n):
            eta[i] = eta_new[i]
        rel = (obj - obj_new) / max(1.0, abs(obj_new))
        obj = obj_new
        path[it] = obj
        kkt = _kkt(X, y, eta, a, b, lam, logistic, pen_a)
        if kkt <= kkt_tol:
            converged = True
        elif rel < obj_tol:
            stalls += 1
            if stalls >= 5:
                break
        else:
            stalls = 0
    return a, b, obj, it, converged, kkt, path[: it + 1]


def fit(X, y, lam: float, opts: SolverOptions = SolverOptions(), init=None) -> LassoFit:
    """Fit the penalized regression of ``y`` on ``X`` at penalty ``lam``.

    Parameters
    ----------
    X : (n, p) array
    y : (n,) array, 0/1 for the logistic link
    lam : float
        Penalty level, >= 0.
    opts : SolverOptions
    init : (intercept, coefficients), optional
        Warm start.

    Returns
    -------
    LassoFit
        ``converged`` is False when the KKT tolerance was not reached within
        ``opts.max_iterations`` outer rounds.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    logistic = opts.link is LinkKind.LOGISTIC
    if logistic:
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("logistic link needs a 0/1 response")
        if not opts.penalize_intercept and (y.min() == y.max()):
            raise DivergingInterceptError(
                "single-class response with an unpenalized intercept has no finite fit")
    if init is None:
        a0, b0 = 0.0, np.zeros(X.shape[1])
    else:
        a0, b0 = float(init[0]), np.array(init[1], dtype=float)
    a, b, obj, it, conv, kkt, path = _solve(
        X, y, float(lam), logistic, opts.penalize_intercept, a0, b0,
        opts.max_iterations, opts.objective_tolerance, opts.kkt_tolerance, WEIGHT_FLOOR)
    b.setflags(write=False)
    return LassoFit(float(a), b, float(lam), float(obj), int(it), bool(conv),
                    float(kkt), tuple(path.tolist()))


def kkt_residual(X, y, fit_: LassoFit, opts: SolverOptions = SolverOptions()) -> float:
    """Largest subgradient-condition violation at ``fit_``."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    eta = fit_.linear_predictor(X)
    return float(_kkt(X, y, eta, fit_.intercept, np.asarray(fit_.coefficients, dtype=float),
                      fit_.lam, opts.link is LinkKind.LOGISTIC, opts.penalize_intercept))


def penalized_objective(X, y, intercept, coefficients, lam, opts: SolverOptions = SolverOptions()):
    X = np.asarray(X, dtype=float)
    eta = intercept + X @ np.asarray(coefficients, dtype=float)
    return float(_objective(eta, np.asarray(y, dtype=float), float(intercept),
                            np.asarray(coefficients, dtype=float), float(lam),
                            opts.link is LinkKind.LOGISTIC, opts.penalize_intercept))


def deviance(y, eta, link: LinkKind = LinkKind.LOGISTIC) -> float:
    """Mean deviance: -2 log-likelihood per observation (squared error for identity)."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if LinkKind(link) is LinkKind.IDENTITY:
        return float(np.mean((y - eta) ** 2))
    # log(1 + e^eta) - y*eta, computed stably
    ll = np.logaddexp(0.0, eta) - y * eta
    return float(2.0 * np.mean(ll))


def _fold_ids(n, k, seed):
    rng = np.random.default_rng(np.random.SeedSequence([seed, n, k]))
    ids = np.arange(n) % k
    rng.shuffle(ids)
    return ids


def select_lambda(X, y, rule, opts: SolverOptions = SolverOptions()):
    """Choose the penalty level.

    Returns ``(lam, C, cv_table)``. ``cv_table`` maps each grid value of C to
    its mean held-out deviance and is empty for :class:`FixedC`. Ties are
    broken toward the larger C.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if isinstance(rule, FixedC):
        return lambda_from_constant(rule.C, n, p), rule.C, {}
    if not isinstance(rule, CrossValidate):
        raise TypeError(f"unknown tuning rule {rule!r}")
    if opts.link is LinkKind.LOGISTIC and y.min() == y.max():
        raise ValueError("cross-validation needs both response classes")
    if rule.folds > n:
        raise ValueError("more folds than observations")
    ids = _fold_ids(n, rule.folds, rule.seed)
    # descending lambda = descending C, for warm starts
    grid = sorted(set(rule.grid), reverse=True)
    table = {}
    totals = {c: 0.0 for c in grid}
    for f in range(rule.folds):
        tr, te = ids != f, ids == f
        warm = None
        for c in grid:
            lam = lambda_from_constant(c, int(tr.sum()), p)
            res = fit(X[tr], y[tr], lam, opts, init=warm)
            warm = (res.intercept, res.coefficients)
            totals[c] += deviance(y[te], res.linear_predictor(X[te]), opts.link) * te.sum()
    for c in grid:
        table[c] = float(totals[c] / n)
    best = min(table.values())
    chosen = max(c for c, d in table.items() if d <= best)
    return lambda_from_constant(chosen, n, p), chosen, dict(sorted(table.items()))
