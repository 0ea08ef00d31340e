"""Weighted bias-corrected estimators of genetic covariance, variances and correlation.

The plug-in quadratic forms built from the two Lasso fits are biased at
leading order by ``g'Sigma(b_hat - b)`` and ``b'Sigma(g_hat - g)``. Each of
these is estimated by a weighted average of score terms

    v' (1/n) sum_i wt(eta_i) * (h(eta_i) - resp_i) * M_i

with ``wt(eta) = (1 + e^eta)^2 / e^eta = 1 / (h(eta)(1 - h(eta)))``, and
subtracted from the plug-in value.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import LinkKind, PairedStudy, Scenario, ShapeError, center_study, link_mean
from .lasso import FixedC, LassoFit, SolverOptions, fit, select_lambda

log = logging.getLogger(__name__)

ETA_CLIP = 30.0


@dataclass(frozen=True)
class CovarianceMatrixEstimate:
    sigma_hat: np.ndarray
    effective_n: int


@dataclass(frozen=True)
class DebiasedEstimates:
    cov_yw: float
    var_y: float
    var_w: float
    corr: float
    plug_in_cov: float
    plug_in_var_y: float
    plug_in_var_w: float
    correction_terms: tuple  # (correction from the y fit, correction from the w fit)
    corr_degenerate: bool = False
    clipped_weights: int = 0
    # context needed downstream for variance estimation
    fit_y: LassoFit | None = field(default=None, repr=False)
    fit_w: LassoFit | None = field(default=None, repr=False)
    study: PairedStudy | None = field(default=None, repr=False)
    link: LinkKind = LinkKind.LOGISTIC
    rows: dict = field(default_factory=dict, repr=False)

    @property
    def plug_in_corr(self) -> float:
        return estimate_correlation(self.plug_in_cov, self.plug_in_var_y, self.plug_in_var_w)


def pooled_covariance(study: PairedStudy) -> CovarianceMatrixEstimate:
    """Pooled second-moment matrix of all distinct covariate rows.

    Shared rows of an overlapped study enter once.
    """
    if study.X.shape[1] != study.Z.shape[1]:
        raise ShapeError("X and Z differ in column count")
    m = study.overlap
    S = study.X.T @ study.X + study.Z[m:].T @ study.Z[m:]
    N = study.n1 + study.n2 - m
    S = S / N
    S = 0.5 * (S + S.T)
    return CovarianceMatrixEstimate(S, N)


def correction_weights(eta, link: LinkKind = LinkKind.LOGISTIC):
    """Per-sample weights and the number of clipped linear predictors."""
    eta = np.asarray(eta, dtype=float)
    if LinkKind(link) is LinkKind.IDENTITY:
        return np.ones_like(eta), 0
    clipped = int(np.count_nonzero(np.abs(eta) > ETA_CLIP))
    e = np.clip(eta, -ETA_CLIP, ETA_CLIP)
    return np.exp(e) + np.exp(-e) + 2.0, clipped


def correction_weight(eta_hat: float, link: LinkKind = LinkKind.LOGISTIC) -> float:
    if not math.isfinite(eta_hat):
        raise ValueError("eta must be finite")
    wts, clipped = correction_weights(np.array([eta_hat]), link)
    if clipped:
        log.warning("linear predictor %.3g clipped to +-%g", eta_hat, ETA_CLIP)
    return float(wts[0])


def _scores(fit_: LassoFit, M, resp, link):
    """Weighted residuals wt_i * (h(eta_i) - resp_i) and the clip count."""
    eta = fit_.linear_predictor(M)
    wts, clipped = correction_weights(eta, link)
    return wts * (link_mean(eta, link) - np.asarray(resp, dtype=float)), clipped


def bias_correction_term(direction, fit_: LassoFit, M, resp, link=LinkKind.LOGISTIC) -> float:
    """``direction' (1/n) sum_i wt_i (h(eta_i) - resp_i) M_i``."""
    M = np.asarray(M, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if M.shape[1] != direction.shape[0] or M.shape[1] != fit_.coefficients.shape[0]:
        raise ShapeError("direction, design and fit disagree on p")
    s, _ = _scores(fit_, M, resp, link)
    return float(s @ (M @ direction)) / M.shape[0]


def quadratic_form(study: PairedStudy, b, g, sigma: CovarianceMatrixEstimate | None = None) -> float:
    """``b' S g`` for the pooled matrix S, via row projections unless ``sigma`` is given."""
    if sigma is not None:
        return float(b @ sigma.sigma_hat @ g)
    m = study.overlap
    s = (study.X @ b) @ (study.X @ g) + (study.Z[m:] @ b) @ (study.Z[m:] @ g)
    return float(s) / (study.n1 + study.n2 - m)


def estimate_covariance(fit_y, fit_w, study, sigma=None, link=LinkKind.LOGISTIC) -> float:
    b, g = fit_y.coefficients, fit_w.coefficients
    plug = quadratic_form(study, b, g, sigma)
    return (plug
            - bias_correction_term(g, fit_y, study.X, study.y, link)
            - bias_correction_term(b, fit_w, study.Z, study.w, link))


def estimate_variance(fit_: LassoFit, M, resp, study, sigma=None, link=LinkKind.LOGISTIC) -> float:
    """Debiased quadratic form ``b' Sigma b`` for the trait observed on ``(M, resp)``."""
    b = fit_.coefficients
    return quadratic_form(study, b, b, sigma) - 2.0 * bias_correction_term(b, fit_, M, resp, link)


def estimate_correlation(cov_yw: float, var_y: float, var_w: float) -> float:
    """Ratio estimate clamped to [-1, 1].

    A non-positive variance product (debiased variances are not sign
    constrained) maps to 0.
    """
    prod = var_y * var_w
    if not prod > 0:
        return 0.0
    r = cov_yw / math.sqrt(prod)
    if r * r < 1.0:
        return r
    return math.copysign(1.0, r)


def correlation_is_degenerate(var_y: float, var_w: float) -> bool:
    return not (var_y * var_w > 0)


def debias(study: PairedStudy, fit_y: LassoFit, fit_w: LassoFit,
           link=LinkKind.LOGISTIC, sigma=None) -> DebiasedEstimates:
    """All debiased and plug-in estimates for given fits on an (already centered) study."""
    link = LinkKind(link)
    b, g = fit_y.coefficients, fit_w.coefficients
    if b.shape[0] != study.p or g.shape[0] != study.p:
        raise ShapeError("fit dimension does not match the study")
    s_y, c_y = _scores(fit_y, study.X, study.y, link)
    s_w, c_w = _scores(fit_w, study.Z, study.w, link)
    Xb, Xg = study.X @ b, study.X @ g
    Zb, Zg = study.Z @ b, study.Z @ g
    # corrections: direction' (1/n) sum s_i M_i
    corr_y_g = float(s_y @ Xg) / study.n1   # estimates g' Sigma (b_hat - b)
    corr_y_b = float(s_y @ Xb) / study.n1   # estimates b' Sigma (b_hat - b)
    corr_w_b = float(s_w @ Zb) / study.n2
    corr_w_g = float(s_w @ Zg) / study.n2
    plug_cov = quadratic_form(study, b, g, sigma)
    plug_vy = quadratic_form(study, b, b, sigma)
    plug_vw = quadratic_form(study, g, g, sigma)
    cov = plug_cov - corr_y_g - corr_w_b
    vy = plug_vy - 2.0 * corr_y_b
    vw = plug_vw - 2.0 * corr_w_g
    clipped = c_y + c_w
    if clipped:
        log.warning("%d correction weights clipped at |eta| = %g", clipped, ETA_CLIP)
    return DebiasedEstimates(
        cov_yw=cov, var_y=vy, var_w=vw,
        corr=estimate_correlation(cov, vy, vw),
        plug_in_cov=plug_cov, plug_in_var_y=plug_vy, plug_in_var_w=plug_vw,
        correction_terms=(corr_y_g, corr_w_b),
        corr_degenerate=correlation_is_degenerate(vy, vw),
        clipped_weights=clipped,
        fit_y=fit_y, fit_w=fit_w, study=study, link=link,
    )


def split_rows(study: PairedStudy, seed: int = 0):
    """Halve each trait's rows into (fit, estimate) index sets.

    Shared rows of an overlapped study are split identically for both traits so
    each half remains an overlapped study with its shared block first.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    m = study.overlap
    shared = rng.permutation(m)
    ry = m + rng.permutation(study.n1 - m)
    rw = m + rng.permutation(study.n2 - m)
    hs, hy, hw = len(shared) // 2, len(ry) // 2, len(rw) // 2
    fit_y = np.concatenate([shared[:hs], ry[:hy]])
    fit_w = np.concatenate([shared[:hs], rw[:hw]])
    est_y = np.concatenate([shared[hs:], ry[hy:]])
    est_w = np.concatenate([shared[hs:], rw[hw:]])
    return {"fit_y": fit_y, "fit_w": fit_w, "estimate_y": est_y,
            "estimate_w": est_w, "estimate_overlap": m - hs}


def full_pipeline(study: PairedStudy, tuning=FixedC(), opts: SolverOptions = SolverOptions(),
                  center: bool = True, split: bool = False, split_seed: int = 0,
                  lambdas=None) -> DebiasedEstimates:
    """Center, tune, fit both Lassos and return every estimate.

    Parameters
    ----------
    study : PairedStudy
    tuning : FixedC or CrossValidate
        Applied to each trait separately.
    opts : SolverOptions
    center : bool
        Subtract pooled column means first.
    split : bool
        Fit on one half of each trait's rows and debias on the other half.
    lambdas : (float, float), optional
        Skip tuning and use these penalty levels for (y, w).
    """
    link = opts.link
    if center:
        study, _ = center_study(study)
    rows = {}
    if split:
        idx = split_rows(study, split_seed)
        Xf, yf = study.X[idx["fit_y"]], study.y[idx["fit_y"]]
        Zf, wf = study.Z[idx["fit_w"]], study.w[idx["fit_w"]]
        m_est = idx["estimate_overlap"]
        est_study = PairedStudy(study.X[idx["estimate_y"]], study.y[idx["estimate_y"]],
                                study.Z[idx["estimate_w"]], study.w[idx["estimate_w"]],
                                m=m_est,
                                scenario=Scenario.OVERLAPPED if m_est > 0 else Scenario.INDEPENDENT)
        rows = {k: v.tolist() for k, v in idx.items() if k != "estimate_overlap"}
    else:
        Xf, yf, Zf, wf = study.X, study.y, study.Z, study.w
        est_study = study
        rows = {"fit_y": list(range(study.n1)), "fit_w": list(range(study.n2)),
                "estimate_y": list(range(study.n1)), "estimate_w": list(range(study.n2))}
    if lambdas is None:
        lam_y, _, _ = select_lambda(Xf, yf, tuning, opts)
        lam_w, _, _ = select_lambda(Zf, wf, tuning, opts)
    else:
        lam_y, lam_w = lambdas
    fy = fit(Xf, yf, lam_y, opts)
    fw = fit(Zf, wf, lam_w, opts)
    for name, f in (("y", fy), ("w", fw)):
        if not f.converged:
            log.warning("lasso for trait %s stopped at KKT residual %.2e", name, f.kkt_residual)
    est = debias(est_study, fy, fw, link)
    return replace(est, rows=rows)
