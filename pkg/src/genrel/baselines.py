"""Comparison methods: plug-in estimates and the percentile bootstrap around them."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import PairedStudy, Scenario, TargetFunctional, center_study
from .lasso import FixedC, LassoFit, SolverOptions, fit, select_lambda
from .relatedness import CovarianceMatrixEstimate, estimate_correlation, quadratic_form

log = logging.getLogger(__name__)

TARGET_ORDER = (TargetFunctional.COVARIANCE, TargetFunctional.VARIANCE_Y,
                TargetFunctional.VARIANCE_W, TargetFunctional.CORRELATION)


class BootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class BootstrapOptions:
    replicates: int = 500
    resample_size: int = 100
    alpha: float = 0.05
    seed: int = 0
    max_failure_share: float = 0.2

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("need at least 2 bootstrap replicates")
        if self.resample_size < 2:
            raise ValueError("resample_size must be at least 2")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class BootstrapResult:
    values: np.ndarray  # (replicates, 4) in TARGET_ORDER; NaN rows are failed replicates
    failed: int
    alpha: float

    def ok_values(self, target) -> np.ndarray:
        col = TARGET_ORDER.index(TargetFunctional(target))
        v = self.values[:, col]
        return v[~np.isnan(v)]

    def interval(self, target, alpha=None):
        """Percentile interval; both endpoints are order statistics of the replicates."""
        a = self.alpha if alpha is None else alpha
        v = np.sort(self.ok_values(target))
        lo = float(np.quantile(v, a / 2.0, method="inverted_cdf"))
        hi = float(np.quantile(v, 1.0 - a / 2.0, method="inverted_cdf"))
        return lo, hi


def plug_in_estimates(fit_y, fit_w, sigma):
    """Unadjusted quadratic forms of the fitted coefficients.

    Parameters
    ----------
    fit_y, fit_w : LassoFit or coefficient vectors
    sigma : (p, p) array, CovarianceMatrixEstimate or PairedStudy
        A study stands for its pooled covariance, evaluated through row
        projections without forming the matrix.

    Returns
    -------
    (cov, var_y, var_w, corr)
    """
    b = fit_y.coefficients if isinstance(fit_y, LassoFit) else np.asarray(fit_y, dtype=float)
    g = fit_w.coefficients if isinstance(fit_w, LassoFit) else np.asarray(fit_w, dtype=float)
    if isinstance(sigma, PairedStudy):
        cov, vy, vw = (quadratic_form(sigma, b, g), quadratic_form(sigma, b, b),
                       quadratic_form(sigma, g, g))
    else:
        S = sigma.sigma_hat if isinstance(sigma, CovarianceMatrixEstimate) else np.asarray(sigma, dtype=float)
        Sg, Sb = S @ g, S @ b
        cov, vy, vw = float(b @ Sg), float(b @ Sb), float(g @ Sg)
    return cov, vy, vw, estimate_correlation(cov, vy, vw)


def _replicate(study: PairedStudy, lam_y, lam_w, opts: BootstrapOptions, solver, init, rep):
    rng = np.random.default_rng(np.random.SeedSequence([opts.seed, rep]))
    iy = rng.integers(0, study.n1, size=opts.resample_size)
    iw = rng.integers(0, study.n2, size=opts.resample_size)
    y, w = study.y[iy], study.w[iw]
    if y.min() == y.max() or w.min() == w.max():
        return None
    boot = PairedStudy(study.X[iy], y, study.Z[iw], w)
    boot, _ = center_study(boot)
    fy = fit(boot.X, boot.y, lam_y, solver, init=init[0])
    fw = fit(boot.Z, boot.w, lam_w, solver, init=init[1])
    return plug_in_estimates(fy, fw, boot)


def bootstrap_replicates(study: PairedStudy, opts: BootstrapOptions = BootstrapOptions(),
                         tuning=FixedC(), solver: SolverOptions = SolverOptions(),
                         lambdas=None, workers: int = 1, center: bool = True) -> BootstrapResult:
    """Plug-in estimates of all four functionals on every bootstrap resample.

    Each trait's rows are resampled independently with replacement. The
    penalty levels are tuned once on the full study (or passed via
    ``lambdas``) and reused for every replicate; the full-study fits serve as
    warm starts. Replicate ``r`` draws from ``SeedSequence([seed, r])`` so the
    result does not depend on ``workers``.
    """
    if opts.resample_size > min(study.n1, study.n2):
        raise ValueError("resample_size exceeds a trait's sample size")
    if center:
        study, _ = center_study(study)
    # resampling treats the traits as independent samples
    study = PairedStudy(study.X, study.y, study.Z, study.w, 0, Scenario.INDEPENDENT)
    if lambdas is None:
        lam_y, _, _ = select_lambda(study.X, study.y, tuning, solver)
        lam_w, _, _ = select_lambda(study.Z, study.w, tuning, solver)
    else:
        lam_y, lam_w = lambdas
    fy = fit(study.X, study.y, lam_y, solver)
    fw = fit(study.Z, study.w, lam_w, solver)
    init = ((fy.intercept, fy.coefficients), (fw.intercept, fw.coefficients))

    def run(rep):
        return _replicate(study, lam_y, lam_w, opts, solver, init, rep)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(opts.replicates)))
    else:
        results = [run(r) for r in range(opts.replicates)]
    values = np.full((opts.replicates, 4), np.nan)
    failed = 0
    for r, res in enumerate(results):
        if res is None:
            failed += 1
        else:
            values[r] = res
    if failed:
        log.warning("%d of %d bootstrap replicates had a single-class response", failed, opts.replicates)
    if failed > opts.max_failure_share * opts.replicates:
        raise BootstrapError(f"{failed} of {opts.replicates} bootstrap replicates failed")
    return BootstrapResult(values, failed, opts.alpha)


def bootstrap_ci(study: PairedStudy, target, opts: BootstrapOptions = BootstrapOptions(),
                 tuning=FixedC(), solver: SolverOptions = SolverOptions(), lambdas=None,
                 workers: int = 1):
    """Percentile bootstrap interval for one functional.

    Returns
    -------
    lower, upper, replicate_values
        ``replicate_values`` holds the successful replicates only.
    """
    res = bootstrap_replicates(study, opts, tuning, solver, lambdas, workers)
    lo, hi = res.interval(target)
    return lo, hi, res.ok_values(target)
