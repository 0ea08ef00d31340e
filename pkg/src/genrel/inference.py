"""Asymptotic variances, confidence intervals and Wald-type tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LinkKind, PairedStudy, Scenario, TargetFunctional
from .lasso import LassoFit
from .relatedness import DebiasedEstimates, correction_weights


class DegenerateOverlapError(ValueError):
    pass


# -- normal distribution -------------------------------------------------------

# Acklam's rational approximation to the inverse normal CDF (rel. error < 1.2e-9
# before refinement).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_quantile(q: float) -> float:
    """Inverse standard normal CDF.

    Rational approximation followed by one Halley step; absolute error is below
    1e-9 on (0, 1).
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    if q < _P_LOW:
        r = math.sqrt(-2.0 * math.log(q))
        x = ((((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5])
             / ((((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0))
    elif q <= 1.0 - _P_LOW:
        s = q - 0.5
        r = s * s
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * s
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        r = math.sqrt(-2.0 * math.log1p(-q))
        x = -((((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5])
              / ((((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0))
    # Halley refinement; use the smaller tail for the residual
    if x < 0:
        e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - q
    else:
        e = (1.0 - q) - 0.5 * math.erfc(x / math.sqrt(2.0))
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def z_critical(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return normal_quantile(1.0 - alpha / 2.0)


# -- variance estimation -------------------------------------------------------


@dataclass(frozen=True)
class VarianceEstimates:
    v2: float
    v2_beta: float
    v2_gamma: float
    v2_R: float | None  # None when the variance product is not positive

    @property
    def correlation_defined(self) -> bool:
        return self.v2_R is not None


def _weights(fit_: LassoFit, M, link):
    return correction_weights(fit_.linear_predictor(M), link)[0]


def _centered_products(study: PairedStudy, b, g):
    """Sum over distinct rows of (b'x x'g - b'S g)^2, and the row count."""
    m = study.overlap
    rows = np.concatenate([(study.X @ b) * (study.X @ g),
                           (study.Z[m:] @ b) * (study.Z[m:] @ g)])
    return float(np.sum((rows - rows.mean()) ** 2)), rows.size


def _check_overlap(study: PairedStudy):
    m = study.overlap
    if study.scenario is Scenario.OVERLAPPED and (m == 0 or m >= study.n1 or m >= study.n2):
        raise DegenerateOverlapError(
            f"overlap m={m} leaves a zero divisor (n1={study.n1}, n2={study.n2}); "
            "use the independent-sample formulas when m=0")


def variance_cov(fit_y: LassoFit, fit_w: LassoFit, study: PairedStudy,
                 link=LinkKind.LOGISTIC) -> float:
    """Moment estimate of the asymptotic variance of the covariance estimator."""
    link = LinkKind(link)
    b, g = fit_y.coefficients, fit_w.coefficients
    n1, n2 = study.n1, study.n2
    wx = _weights(fit_y, study.X, link)
    wz = _weights(fit_w, study.Z, link)
    sx = float(wx @ (study.X @ g) ** 2)
    sz = float(wz @ (study.Z @ b) ** 2)
    cp, N = _centered_products(study, b, g)
    if study.scenario is Scenario.OVERLAPPED:
        _check_overlap(study)
        m = study.overlap
        d1 = cp / N
        d2 = sx / n1
        d3 = sz / n2
        return d1 + (N / m + N / (n1 - m)) * d2 + (N / m + N / (n2 - m)) * d3
    return N / n1 ** 2 * sx + N / n2 ** 2 * sz + cp / N


def variance_quadratic(fit_: LassoFit, M, study: PairedStudy, link=LinkKind.LOGISTIC) -> float:
    """Asymptotic variance estimate of a debiased genetic variance.

    ``fit_`` and ``M`` are the trait's own Lasso fit and design (X for the y
    trait, Z for the w trait); ``study`` supplies the pooled rows.
    """
    b = fit_.coefficients
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    wt = _weights(fit_, M, LinkKind(link))
    cp, N = _centered_products(study, b, b)
    return 4.0 * N / n ** 2 * float(wt @ (M @ b) ** 2) + cp / N


def variance_correlation(v2: float, var_y: float, var_w: float):
    prod = var_y * var_w
    if not prod > 0:
        return None
    return v2 / prod


def estimate_variances(est: DebiasedEstimates) -> VarianceEstimates:
    s = est.study
    v2 = variance_cov(est.fit_y, est.fit_w, s, est.link)
    return VarianceEstimates(
        v2=v2,
        v2_beta=variance_quadratic(est.fit_y, s.X, s, est.link),
        v2_gamma=variance_quadratic(est.fit_w, s.Z, s, est.link),
        v2_R=variance_correlation(v2, est.var_y, est.var_w),
    )


# -- intervals and tests -------------------------------------------------------


@dataclass(frozen=True)
class InferenceResult:
    target: TargetFunctional
    point: float
    ci_lower: float
    ci_upper: float
    alpha: float
    null_value: float
    t_stat: float
    p_value: float
    reject: bool

    def as_dict(self):
        d = dict(self.__dict__)
        d["target"] = self.target.value
        return d


def _half_width(v2, n_total, alpha):
    if v2 < 0:
        raise ValueError("variance estimate must be non-negative")
    if n_total < 1:
        raise ValueError("n_total must be >= 1")
    return z_critical(alpha) * math.sqrt(v2 / n_total)


def confidence_interval(point, v2, n_total, alpha=0.05, target=TargetFunctional.COVARIANCE):
    h = _half_width(v2, n_total, alpha)
    lo, hi = point - h, point + h
    if TargetFunctional(target) is TargetFunctional.CORRELATION:
        lo, hi = max(lo, -1.0), min(hi, 1.0)
    return lo, hi


def hypothesis_test(point, v2, n_total, null_value=0.0, alpha=0.05,
                    target=TargetFunctional.COVARIANCE) -> InferenceResult:
    """Wald test of ``functional == null_value`` with its (1 - alpha) interval.

    Rejection is decided by whether ``null_value`` falls outside the unclamped
    interval, which is the event ``|t| > z_{alpha/2}`` and keeps test/interval
    duality exact in floating point.
    """
    target = TargetFunctional(target)
    if target is TargetFunctional.CORRELATION and not -1.0 <= null_value <= 1.0:
        raise ValueError("correlation null value must lie in [-1, 1]")
    h = _half_width(v2, n_total, alpha)
    raw_lo, raw_hi = point - h, point + h
    lo, hi = confidence_interval(point, v2, n_total, alpha, target)
    diff = point - null_value
    if v2 > 0:
        t = math.sqrt(n_total) * diff / math.sqrt(v2)
        p = math.erfc(abs(t) / math.sqrt(2.0))
    elif diff == 0:
        t, p = 0.0, 1.0
    else:
        t, p = math.copysign(math.inf, diff), 0.0
    reject = bool(null_value < raw_lo or null_value > raw_hi)
    return InferenceResult(target, point, lo, hi, alpha, null_value, t, min(p, 1.0), reject)


def inference_n(study: PairedStudy, overlap_n: str = "effective") -> int:
    """Sample size used in the sqrt(n) scaling.

    ``"effective"`` counts shared individuals once (n1 + n2 - m); ``"total"``
    uses n1 + n2.
    """
    if overlap_n == "total":
        return study.n1 + study.n2
    if overlap_n != "effective":
        raise ValueError(f"unknown overlap_n mode {overlap_n!r}")
    return study.effective_n


def infer_all(est: DebiasedEstimates, alpha=0.05, null_values=None,
              overlap_n="effective", variances: VarianceEstimates | None = None):
    """Intervals and tests for all four functionals.

    Returns ``(results, variances)`` where ``results`` maps each
    TargetFunctional to an InferenceResult, or to None for the correlation when
    its variance is undefined.
    """
    nulls = {t: 0.0 for t in TargetFunctional}
    if null_values:
        nulls.update({TargetFunctional(k): float(v) for k, v in null_values.items()})
    var = variances or estimate_variances(est)
    n = inference_n(est.study, overlap_n)
    out = {
        TargetFunctional.COVARIANCE: hypothesis_test(
            est.cov_yw, var.v2, n, nulls[TargetFunctional.COVARIANCE], alpha,
            TargetFunctional.COVARIANCE),
        TargetFunctional.VARIANCE_Y: hypothesis_test(
            est.var_y, var.v2_beta, n, nulls[TargetFunctional.VARIANCE_Y], alpha,
            TargetFunctional.VARIANCE_Y),
        TargetFunctional.VARIANCE_W: hypothesis_test(
            est.var_w, var.v2_gamma, n, nulls[TargetFunctional.VARIANCE_W], alpha,
            TargetFunctional.VARIANCE_W),
        TargetFunctional.CORRELATION: None,
    }
    if var.correlation_defined:
        out[TargetFunctional.CORRELATION] = hypothesis_test(
            est.corr, var.v2_R, n, nulls[TargetFunctional.CORRELATION], alpha,
            TargetFunctional.CORRELATION)
    return out, var
