"""Mean structures: categorical-visit baseline model and its continuous-time
nonlinear variants, with a shared parameter layout and evaluation path.

Every variant describes both arms through the placebo trajectory.  The
placebo curve is an interpolant of the per-visit placebo means ``alpha`` with
knots at the scheduled visits, rebuilt from the current ``alpha`` at every
likelihood evaluation; active-arm means are obtained by rescaling either the
outcome axis (``prop_decline``) or the time axis (all ``time``/``delay``
variants).  The categorical ``clda`` variant keeps one free mean per visit
and arm with a pooled baseline and never touches an interpolant when times
are scheduled.

Supported variants and their treatment-effect blocks:

==============================  =============================================
clda                            none (active visit means are free parameters)
prop_decline                    beta, scales change from baseline
time_pmrm                       beta_1..beta_m, per-visit time rescaling
prop_slowing                    beta, shared time rescaling
delay_general                   beta_1..beta_m, per-visit time shifts
delay_constant                  beta, shared time shift
delay_two_param                 beta_1 before plateau visit, beta_max after
prop_slowing_with_improvement   beta plus one additive offset per listed visit
prop_slowing_subgroup           beta plus rho, relative subgroup rate
==============================  =============================================
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .data import TrialDataset, VisitSchedule
from .errors import ContractError, InitializationError, ValidationError
from .interpolation import KINDS, _KIND_CODES, Interpolant, build_interpolant

VARIANTS = (
    "clda",
    "prop_decline",
    "time_pmrm",
    "prop_slowing",
    "delay_general",
    "delay_constant",
    "delay_two_param",
    "prop_slowing_with_improvement",
    "prop_slowing_subgroup",
)

# variants whose beta acts multiplicatively (no-effect value 1); delays use 0
MULTIPLICATIVE_VARIANTS = (
    "prop_decline",
    "time_pmrm",
    "prop_slowing",
    "prop_slowing_with_improvement",
    "prop_slowing_subgroup",
)
DELAY_VARIANTS = ("delay_general", "delay_constant", "delay_two_param")


@dataclass(frozen=True)
class MeanModelSpec:
    """Which variant to fit, on which schedule, with which interpolation."""

    variant: str
    schedule: VisitSchedule
    interpolation_kind: Optional[str] = "natural_cubic"
    improvement_visits: tuple = ()   # visit times carrying additive offsets
    delay_plateau_visit: Optional[int] = None  # j' for delay_two_param

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown model variant {self.variant!r}")
        if self.variant == "clda":
            object.__setattr__(self, "interpolation_kind", None)
        elif self.interpolation_kind not in KINDS:
            raise ValidationError(
                f"variant {self.variant} requires an interpolation kind, "
                f"got {self.interpolation_kind!r}"
            )
        object.__setattr__(
            self, "improvement_visits", tuple(float(t) for t in self.improvement_visits)
        )
        if self.variant == "prop_slowing_with_improvement":
            if not self.improvement_visits:
                raise ValidationError("improvement variant needs improvement_visits")
            for t in self.improvement_visits:
                if t not in self.schedule.times[1:]:
                    raise ValidationError(
                        f"improvement visit time {t} is not a post-baseline schedule time"
                    )
        elif self.improvement_visits:
            raise ValidationError("improvement_visits only apply to the improvement variant")
        if self.variant == "delay_two_param":
            jp = self.delay_plateau_visit
            if jp is None or not 1 <= jp <= self.schedule.m:
                raise ValidationError("delay_two_param needs plateau visit in 1..m")
        elif self.delay_plateau_visit is not None:
            raise ValidationError("delay_plateau_visit only applies to delay_two_param")

    @property
    def improvement_indices(self) -> tuple:
        return tuple(self.schedule.times.index(t) for t in self.improvement_visits)


@dataclass(frozen=True)
class ParameterVector:
    """Parameter blocks for one variant; unused blocks stay empty.

    ``alpha`` holds the pooled baseline mean followed by the placebo means at
    post-baseline visits for every variant; the baseline constraint (equal arm
    means at baseline) holds by construction because the baseline mean is
    stored exactly once.
    """

    alpha: np.ndarray
    beta: np.ndarray = field(default_factory=lambda: np.empty(0))
    delta: np.ndarray = field(default_factory=lambda: np.empty(0))
    rho: Optional[float] = None
    clda_active: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float))
        object.__setattr__(self, "clda_active", np.asarray(self.clda_active, dtype=float))


def beta_length(spec: MeanModelSpec) -> int:
    m = spec.schedule.m
    return {
        "clda": 0,
        "prop_decline": 1,
        "prop_slowing": 1,
        "prop_slowing_with_improvement": 1,
        "prop_slowing_subgroup": 1,
        "delay_constant": 1,
        "time_pmrm": m,
        "delay_general": m,
        "delay_two_param": 2,
    }[spec.variant]


def no_effect_beta(spec: MeanModelSpec) -> np.ndarray:
    """The beta value under which active and placebo trajectories coincide."""
    fill = 1.0 if spec.variant in MULTIPLICATIVE_VARIANTS else 0.0
    return np.full(beta_length(spec), fill)


def validate_parameters(spec: MeanModelSpec, params: ParameterVector) -> None:
    m = spec.schedule.m
    if params.alpha.shape != (m + 1,):
        raise ContractError(
            f"{spec.variant}: alpha must have length {m + 1}, got {params.alpha.shape}"
        )
    if params.beta.shape != (beta_length(spec),):
        raise ContractError(
            f"{spec.variant}: beta must have length {beta_length(spec)}, "
            f"got {params.beta.shape}"
        )
    n_delta = len(spec.improvement_visits)
    if params.delta.shape != (n_delta,):
        raise ContractError(f"{spec.variant}: delta must have length {n_delta}")
    if spec.variant == "prop_slowing_subgroup":
        if params.rho is None:
            raise ContractError("subgroup variant requires rho")
    elif params.rho is not None:
        raise ContractError(f"{spec.variant}: rho is not a parameter of this variant")
    n_act = m if spec.variant == "clda" else 0
    if params.clda_active.shape != (n_act,):
        raise ContractError(f"{spec.variant}: clda_active must have length {n_act}")


def param_names(spec: MeanModelSpec) -> tuple:
    """Flattened mean-parameter names, in the order used by the optimizer."""
    m = spec.schedule.m
    names = [f"alpha_{j}" for j in range(m + 1)]
    if spec.variant in ("time_pmrm", "delay_general"):
        names += [f"beta_{j}" for j in range(1, m + 1)]
    elif spec.variant == "delay_two_param":
        names += ["beta_1", "beta_max"]
    elif spec.variant != "clda":
        names += ["beta"]
    names += [f"delta_{_fmt_time(t)}" for t in spec.improvement_visits]
    if spec.variant == "prop_slowing_subgroup":
        names += ["rho"]
    if spec.variant == "clda":
        names += [f"alpha_active_{j}" for j in range(1, m + 1)]
    return tuple(names)


def _fmt_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else str(t)


def flatten(spec: MeanModelSpec, params: ParameterVector) -> np.ndarray:
    validate_parameters(spec, params)
    parts = [params.alpha, params.beta, params.delta]
    if params.rho is not None:
        parts.append(np.array([params.rho]))
    parts.append(params.clda_active)
    return np.concatenate(parts)


def unflatten(spec: MeanModelSpec, vec: np.ndarray) -> ParameterVector:
    m = spec.schedule.m
    nb = beta_length(spec)
    nd = len(spec.improvement_visits)
    has_rho = spec.variant == "prop_slowing_subgroup"
    n_act = m if spec.variant == "clda" else 0
    expected = (m + 1) + nb + nd + (1 if has_rho else 0) + n_act
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (expected,):
        raise ContractError(f"{spec.variant}: expected {expected} mean parameters")
    pos = m + 1
    alpha = vec[:pos]
    beta = vec[pos : pos + nb]
    pos += nb
    delta = vec[pos : pos + nd]
    pos += nd
    rho = float(vec[pos]) if has_rho else None
    pos += 1 if has_rho else 0
    return ParameterVector(
        alpha=alpha, beta=beta, delta=delta, rho=rho, clda_active=vec[pos:]
    )


def n_mean_params(spec: MeanModelSpec) -> int:
    return len(param_names(spec))


def placebo_curve(spec: MeanModelSpec, params: ParameterVector) -> Interpolant:
    """Interpolant of the placebo visit means with knots at all scheduled visits."""
    if spec.variant == "clda":
        raise ContractError("the categorical variant has no placebo curve")
    return build_interpolant(spec.interpolation_kind, spec.schedule.as_array(), params.alpha)


def _delta_by_visit(spec: MeanModelSpec, params: ParameterVector) -> np.ndarray:
    out = np.zeros(spec.schedule.m + 1)
    for pos, j in enumerate(spec.improvement_indices):
        out[j] = params.delta[pos]
    return out


def _profile_means(spec, params, f0_arrays, times, visit_idx, active, group2):
    """Mean values for observations of one (arm, group) profile.

    ``times`` and ``visit_idx`` are aligned arrays; ``f0_arrays`` carries the
    placebo-curve arrays (kind code, knots, values, second derivatives), or
    None for the categorical variant.
    """
    variant = spec.variant
    alpha = params.alpha
    if variant == "clda":
        if active:
            vals = np.concatenate(([alpha[0]], params.clda_active))
        else:
            vals = alpha
        return vals[visit_idx]
    kind, knots, values, m2 = f0_arrays
    t = np.asarray(times, dtype=float)
    if variant == "prop_decline":
        base = _kernels.interp_eval(kind, knots, values, m2, np.ascontiguousarray(t))
        base = np.asarray(base)
        if active:
            base = params.beta[0] * (base - alpha[0]) + alpha[0]
        return base
    # time-axis variants
    s = t
    if variant == "time_pmrm":
        if active:
            factors = np.concatenate(([1.0], params.beta))
            s = factors[visit_idx] * t
    elif variant in ("prop_slowing", "prop_slowing_with_improvement"):
        if active:
            s = params.beta[0] * t
    elif variant == "prop_slowing_subgroup":
        rate = 1.0 - params.rho if group2 else 1.0
        s = (params.beta[0] * rate if active else rate) * t
    elif variant == "delay_general":
        if active:
            shifts = np.concatenate(([0.0], params.beta))
            s = t - shifts[visit_idx]
    elif variant == "delay_constant":
        if active:
            s = t - np.where(visit_idx > 0, params.beta[0], 0.0)
    elif variant == "delay_two_param":
        if active:
            jp = spec.delay_plateau_visit
            d = np.where(
                visit_idx >= jp,
                params.beta[1],
                np.where(visit_idx > 0, params.beta[0], 0.0),
            )
            s = t - d
    base = _kernels.interp_eval(kind, knots, values, m2, np.ascontiguousarray(s, dtype=float))
    base = np.asarray(base)
    if variant == "prop_slowing_with_improvement":
        base = base + _delta_by_visit(spec, params)[visit_idx]
    return base


def _f0_arrays(spec: MeanModelSpec, params: ParameterVector):
    if spec.variant == "clda":
        return None
    knots = spec.schedule.as_array()
    values = np.ascontiguousarray(params.alpha)
    if spec.interpolation_kind == "natural_cubic":
        m2 = np.asarray(_kernels.cubic_second_derivs(knots, values))
    else:
        m2 = np.zeros_like(knots)
    return _KIND_CODES[spec.interpolation_kind], knots, values, m2


def mean_table(spec: MeanModelSpec, params: ParameterVector) -> np.ndarray:
    """Scheduled-time mean values, rows (placebo/g1, placebo/g2, active/g1, active/g2)."""
    validate_parameters(spec, params)
    f0 = _f0_arrays(spec, params)
    t = spec.schedule.as_array()
    visit_idx = np.arange(t.shape[0], dtype=np.int64)
    rows = [
        _profile_means(spec, params, f0, t, visit_idx, active, group2)
        for active in (False, True)
        for group2 in (False, True)
    ]
    return np.vstack(rows)


def predicted_means(spec: MeanModelSpec, params: ParameterVector, packed) -> np.ndarray:
    """Per-observation mean vector for a packed dataset."""
    if packed.time_mode == "scheduled":
        table = mean_table(spec, params)
        return table[packed.profile, packed.visit_idx]
    validate_parameters(spec, params)
    f0 = _f0_arrays(spec, params)
    mu = np.empty(packed.n_observations)
    for code in range(4):
        mask = packed.profile == code
        if not np.any(mask):
            continue
        mu[mask] = _profile_means(
            spec,
            params,
            f0,
            packed.times[mask],
            packed.visit_idx[mask],
            active=code >= 2,
            group2=bool(code % 2),
        )
    return mu


def mean_value(spec, params, arm, group, visit_index, t) -> float:
    """Model mean for one observation.

    ``arm`` is ``placebo``/``active``; ``group`` is None or ``group1``/``group2``;
    ``t`` is the observation time (equal to the schedule time of
    ``visit_index`` in scheduled-time designs).
    """
    validate_parameters(spec, params)
    if not 0 <= visit_index <= spec.schedule.m:
        raise ContractError(f"visit index {visit_index} outside schedule")
    out = _profile_means(
        spec,
        params,
        _f0_arrays(spec, params),
        np.array([float(t)]),
        np.array([visit_index], dtype=np.int64),
        active=arm == "active",
        group2=group == "group2",
    )
    return float(out[0])


def design_vector(spec: MeanModelSpec, arm, group, visit_index) -> np.ndarray:
    """Treatment-design row for one observation.

    For the nonlinear variants this is the selector that maps the treatment
    block to the effect used at this visit (leading entry = the fixed
    no-effect slot for multiplicative variants).  For the categorical variant
    it is the full design row over the mean parameters.
    """
    m = spec.schedule.m
    j = int(visit_index)
    if not 0 <= j <= m:
        raise ContractError(f"visit index {j} outside schedule")
    active = arm == "active"
    if spec.variant == "clda":
        row = np.zeros(2 * m + 1)
        if j == 0:
            row[0] = 1.0
        elif active:
            row[m + j] = 1.0
        else:
            row[j] = 1.0
        return row
    if spec.variant == "time_pmrm":
        row = np.zeros(m + 1)
        row[j if active else 0] = 1.0
        return row
    if spec.variant == "delay_general":
        row = np.zeros(m)
        if active and j > 0:
            row[j - 1] = 1.0
        return row
    if spec.variant == "delay_constant":
        return np.array([1.0 if active and j > 0 else 0.0])
    if spec.variant == "delay_two_param":
        jp = spec.delay_plateau_visit
        if not active or j == 0:
            return np.zeros(2)
        return np.array([1.0 if j < jp else 0.0, 1.0 if j >= jp else 0.0])
    # proportional variants share the two-slot selector
    return np.array([0.0, 1.0]) if active else np.array([1.0, 0.0])


def _visit_means(dataset: TrialDataset, arm: Optional[str], visit: int):
    vals = [
        y
        for s in dataset.subjects
        if arm is None or s.arm == arm
        for v, _, y in s.observations
        if v == visit
    ]
    return vals


def initial_parameters(spec: MeanModelSpec, dataset: TrialDataset) -> ParameterVector:
    """Starting values: sample means for alpha, the no-effect value for beta.

    The baseline mean pools both arms; post-baseline alpha entries are
    placebo sample means.  Offsets and the subgroup rate start at zero.
    """
    m = spec.schedule.m
    alpha = np.empty(m + 1)
    base = _visit_means(dataset, None, 0)
    if not base:
        raise InitializationError("no baseline observations at visit 0")
    alpha[0] = float(np.mean(base))
    for j in range(1, m + 1):
        vals = _visit_means(dataset, "placebo", j)
        if not vals:
            raise InitializationError(f"no placebo observations at visit {j}")
        alpha[j] = float(np.mean(vals))
    clda_active = np.empty(0)
    if spec.variant == "clda":
        clda_active = np.empty(m)
        for j in range(1, m + 1):
            vals = _visit_means(dataset, "active", j)
            if not vals:
                raise InitializationError(f"no active observations at visit {j}")
            clda_active[j - 1] = float(np.mean(vals))
    return ParameterVector(
        alpha=alpha,
        beta=no_effect_beta(spec),
        delta=np.zeros(len(spec.improvement_visits)),
        rho=0.0 if spec.variant == "prop_slowing_subgroup" else None,
        clda_active=clda_active,
    )
