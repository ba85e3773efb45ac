"""Hypothesis tests and effect quantifications on fitted models.

One-sided p-values are reported in the beneficial direction.  By default the
outcome scale is "higher is worse" (cognitive/functional severity scores), so
benefit is a negative contrast on the outcome scale, a multiplicative time
factor below 1, or a positive delay; pass ``higher_is_better=True`` to flip.
95% intervals use the normal quantile 1.959964.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import chi2, norm

from .data import VisitSchedule
from .errors import ContractError, FitError
from .estimation import FitResult
from .models import DELAY_VARIANTS, MULTIPLICATIVE_VARIANTS

Z_95 = 1.959964


class SingularContrastError(FitError):
    """The contrast covariance of the all-visits test is singular."""


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_two_sided: float
    df: Optional[int] = None
    p_one_sided: Optional[float] = None
    estimate: Optional[float] = None
    se: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None


def default_null_value(variant: str, selector: str) -> float:
    if selector == "clda_final_contrast":
        return 0.0
    return 1.0 if variant in MULTIPLICATIVE_VARIANTS else 0.0


def default_direction(variant: str, selector: str, higher_is_better: bool = False) -> str:
    """Beneficial direction of the estimate relative to the null value."""
    if selector == "clda_final_contrast":
        direction = "less"
    elif variant in DELAY_VARIANTS:
        direction = "greater"
    elif variant in MULTIPLICATIVE_VARIANTS:
        direction = "less"
    else:
        raise ContractError(f"no default direction for {variant}/{selector}")
    if higher_is_better:
        direction = "greater" if direction == "less" else "less"
    return direction


def _selector_weights(fit: FitResult, selector: str) -> np.ndarray:
    names = fit.param_names
    w = np.zeros(len(names))
    if selector == "clda_final_contrast":
        if fit.spec.variant != "clda":
            raise ContractError("clda_final_contrast requires a clda fit")
        m = fit.spec.schedule.m
        w[names.index(f"alpha_active_{m}")] = 1.0
        w[names.index(f"alpha_{m}")] = -1.0
        return w
    if selector == "beta_final":
        m = fit.spec.schedule.m
        name = f"beta_{m}" if f"beta_{m}" in names else "beta"
        if name not in names:
            raise ContractError(f"fit has no final-visit treatment parameter")
        w[names.index(name)] = 1.0
        return w
    if selector in names:
        w[names.index(selector)] = 1.0
        return w
    raise ContractError(f"unknown parameter selector {selector!r}")


def wald_test(
    fit: FitResult,
    selector: str,
    null_value: Optional[float] = None,
    direction: Optional[str] = None,
    higher_is_better: bool = False,
) -> TestResult:
    """Wald z-test of one mean parameter (or the final-visit arm contrast).

    ``selector`` is a parameter name ("beta", "beta_3", "rho", ...),
    "beta_final" for the last-visit treatment parameter, or
    "clda_final_contrast" for the categorical model's final-visit difference.
    """
    if not fit.converged:
        raise FitError("Wald test requires a converged fit")
    w = _selector_weights(fit, selector)
    if null_value is None:
        null_value = default_null_value(fit.spec.variant, selector)
    if direction is None:
        direction = default_direction(fit.spec.variant, selector, higher_is_better)
    if direction not in ("less", "greater"):
        raise ContractError(f"direction must be 'less' or 'greater', got {direction!r}")
    theta = np.asarray(fit.theta[: len(fit.param_names)])
    estimate = float(w @ theta)
    _, vcov = _vcov(fit)
    se = float(np.sqrt(w @ vcov @ w))
    z = (estimate - null_value) / se
    p_one = float(norm.cdf(z)) if direction == "less" else float(norm.sf(z))
    return TestResult(
        statistic=float(z),
        p_two_sided=float(2.0 * norm.sf(abs(z))),
        p_one_sided=p_one,
        estimate=estimate,
        se=se,
        ci_low=estimate - Z_95 * se,
        ci_high=estimate + Z_95 * se,
    )


def _vcov(fit: FitResult):
    from .estimation import standard_errors

    return standard_errors(fit)


def trapezoid_weights(schedule: VisitSchedule) -> np.ndarray:
    """Weights w such that w . means equals the trapezoidal area under the means."""
    t = schedule.as_array()
    w = np.zeros_like(t)
    w[:-1] += 0.5 * np.diff(t)
    w[1:] += 0.5 * np.diff(t)
    return w


def auc_contrast(fit: FitResult, schedule: Optional[VisitSchedule] = None) -> TestResult:
    """Between-arm difference in trapezoidal area under the fitted visit means.

    The area is linear in the mean parameters, so the standard error follows
    exactly from the mean-parameter covariance.  Requires a clda fit.
    """
    if fit.spec.variant != "clda":
        raise ContractError("the area contrast is defined for the categorical model")
    if not fit.converged:
        raise FitError("area contrast requires a converged fit")
    schedule = schedule or fit.spec.schedule
    m = schedule.m
    tw = trapezoid_weights(schedule)
    names = fit.param_names
    w = np.zeros(len(names))
    # shared baseline cancels in the contrast; post-baseline means carry +-w_j
    for j in range(1, m + 1):
        w[names.index(f"alpha_active_{j}")] += tw[j]
        w[names.index(f"alpha_{j}")] -= tw[j]
    theta = np.asarray(fit.theta[: len(names)])
    estimate = float(w @ theta)
    _, vcov = _vcov(fit)
    se = float(np.sqrt(w @ vcov @ w))
    z = estimate / se
    return TestResult(
        statistic=float(z),
        p_two_sided=float(2.0 * norm.sf(abs(z))),
        p_one_sided=float(norm.cdf(z)),
        estimate=estimate,
        se=se,
        ci_low=estimate - Z_95 * se,
        ci_high=estimate + Z_95 * se,
    )


def type3_treatment_test(fit: FitResult) -> TestResult:
    """Wald chi-square test of any treatment effect across all visits (df = m)."""
    if fit.spec.variant != "clda":
        raise ContractError("the treatment-across-visits test requires a clda fit")
    if not fit.converged:
        raise FitError("type III test requires a converged fit")
    m = fit.spec.schedule.m
    names = fit.param_names
    contrast_rows = np.zeros((m, len(names)))
    for j in range(1, m + 1):
        contrast_rows[j - 1, names.index(f"alpha_active_{j}")] = 1.0
        contrast_rows[j - 1, names.index(f"alpha_{j}")] = -1.0
    theta = np.asarray(fit.theta[: len(names)])
    c = contrast_rows @ theta
    _, vcov = _vcov(fit)
    vc = contrast_rows @ vcov @ contrast_rows.T
    try:
        stat = float(c @ np.linalg.solve(vc, c))
    except np.linalg.LinAlgError:
        raise SingularContrastError("contrast covariance is singular") from None
    return TestResult(
        statistic=stat,
        df=m,
        p_two_sided=float(chi2.sf(stat, m)),
    )


def lrt_proportional_slowing(fit_restricted: FitResult, fit_general: FitResult) -> TestResult:
    """Likelihood-ratio test of the one-parameter slowing model against the
    per-visit time-rescaling model; df = m - 1.

    The statistic is clamped at zero; a restricted fit beating the general
    one by more than 1e-4 flags an optimizer failure.
    """
    if fit_restricted.spec.variant != "prop_slowing":
        raise ContractError("restricted fit must be the proportional-slowing variant")
    if fit_general.spec.variant != "time_pmrm":
        raise ContractError("general fit must be the per-visit time-rescaling variant")
    if not (fit_restricted.converged and fit_general.converged):
        raise FitError("both fits must converge before the likelihood-ratio test")
    raw = 2.0 * (fit_general.loglik - fit_restricted.loglik)
    if raw < -1e-4:
        raise FitError(
            f"restricted model beat the general one (2*delta = {raw:.6f}); "
            "optimizer failure, flag this replication"
        )
    stat = max(raw, 0.0)
    df = fit_general.spec.schedule.m - 1
    return TestResult(statistic=stat, df=df, p_two_sided=float(chi2.sf(stat, df)))
