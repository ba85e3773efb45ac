"""Scenario generators for Monte-Carlo studies.

Three built-in families:

* ``cs1``: fully simulated 36-month trials on a six-visit schedule with an
  ADAS-cog-like placebo trajectory, multivariate-normal errors with an
  unstructured covariance, and six stylized treatment-effect arms.
* ``cs2``: resampling (with replacement) from a pool of historical-style
  CDR-SB-like trajectories over weeks 0/28/52/80 with dropout, applying
  mean-level or subject-level treatment-effect transforms to the active arm.
  The shipped pool is synthetic, calibrated to published summary statistics.
* ``cs3``: hypothetical 78-week trials used for covariate models (shared
  initial improvements at weeks 12 and 26; a faster-progressing subgroup).

All generators are pure functions of (scenario, seed) using a counter-based
Philox generator, so replications are reproducible across machines and
worker counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import SubjectRecord, TrialDataset, VisitSchedule, observed_rows
from .errors import ContractError, ValidationError
from .interpolation import build_interpolant

RNG_ID = "numpy-philox-4x64"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


# ---------------------------------------------------------------------------
# family 1: simulated 36-month trials

CS1_SCHEDULE = VisitSchedule(times=(0.0, 6.0, 12.0, 18.0, 24.0, 36.0))
CS1_PLACEBO_MEANS = np.array([19.6, 20.5, 20.9, 22.7, 23.8, 27.4])
CS1_COVARIANCE = np.array(
    [
        [45.1, 40.0, 45.1, 54.9, 53.6, 60.8],
        [40.0, 57.8, 54.4, 66.3, 64.1, 74.7],
        [45.1, 54.4, 72.0, 80.0, 77.6, 93.1],
        [54.9, 66.3, 80.0, 109.8, 99.3, 121.7],
        [53.6, 64.1, 77.6, 99.3, 111.4, 127.8],
        [60.8, 74.7, 93.1, 121.7, 127.8, 191.4],
    ]
)

CS1_EFFECTS = (
    "none",
    "stable_symptomatic",
    "fading_symptomatic",
    "reduced_decline_20",
    "stable_delay_4m",
    "slowed_20",
    "increasing_slowing",
)

# per-visit delays (months) for the two delay-shaped effect arms
_DELAY_4M = (0.0, 1.0, 2.0, 4.0, 4.0, 4.0)
_DELAY_INCREASING = (0.0, 0.5, 1.0, 2.5, 2.5, 7.2)


def cs1_active_means(effect: str, mean_placebo=None, schedule: VisitSchedule = CS1_SCHEDULE):
    """Active-arm visit means for one effect arm, from the placebo means.

    Time-shaped effects evaluate the linear interpolant of the placebo means
    at transformed times; all arms equal placebo at baseline.
    """
    if effect not in CS1_EFFECTS:
        raise ContractError(f"unknown effect {effect!r}")
    placebo = np.asarray(
        CS1_PLACEBO_MEANS if mean_placebo is None else mean_placebo, dtype=float
    )
    t = schedule.as_array()
    curve = build_interpolant("linear", t, placebo)
    if effect == "none":
        return placebo.copy()
    # symptomatic benefit vectors lower the (higher-is-worse) outcome
    if effect == "stable_symptomatic":
        return placebo - np.array([0.0, 0.39, 0.78, 0.78, 0.78, 0.78])
    if effect == "fading_symptomatic":
        return placebo - np.array([0.0, 0.39, 0.78, 0.78, 0.52, 0.39])
    if effect == "reduced_decline_20":
        return 0.8 * (placebo - placebo[0]) + placebo[0]
    if effect == "stable_delay_4m":
        return curve(t - np.asarray(_DELAY_4M))
    if effect == "slowed_20":
        return curve(0.8 * t)
    return curve(t - np.asarray(_DELAY_INCREASING))  # increasing_slowing


@dataclass(frozen=True)
class Cs1Scenario:
    """Simulated-trial scenario: effect arm, arm size, generating moments."""

    effect: str
    n_per_arm: int
    mean_placebo: np.ndarray = field(default_factory=lambda: CS1_PLACEBO_MEANS.copy())
    covariance: np.ndarray = field(default_factory=lambda: CS1_COVARIANCE.copy())
    schedule: VisitSchedule = CS1_SCHEDULE

    def __post_init__(self):
        if self.effect not in CS1_EFFECTS:
            raise ValidationError(f"unknown effect {self.effect!r}")
        if self.n_per_arm < 1:
            raise ValidationError("n_per_arm must be positive")

    def active_means(self) -> np.ndarray:
        return cs1_active_means(self.effect, self.mean_placebo, self.schedule)


def _mvn_subjects(rng, prefix, arm, mean, chol, n, times, group_of=None):
    draws = mean + rng.standard_normal((n, mean.shape[0])) @ chol.T
    subjects = []
    for i in range(n):
        obs = tuple((j, times[j], float(draws[i, j])) for j in range(len(times)))
        subjects.append(
            SubjectRecord(
                subject_id=f"{prefix}{i:05d}",
                arm=arm,
                group=None if group_of is None else group_of(i),
                observations=obs,
            )
        )
    return subjects


def generate_cs1_trial(scenario: Cs1Scenario, seed: int) -> TrialDataset:
    """Draw one complete-trajectory trial; deterministic given the seed."""
    try:
        chol = np.linalg.cholesky(np.asarray(scenario.covariance, dtype=float))
    except np.linalg.LinAlgError:
        raise ValidationError("generating covariance is not positive definite") from None
    rng = make_rng(seed)
    times = scenario.schedule.times
    subjects = _mvn_subjects(
        rng, "p", "placebo", np.asarray(scenario.mean_placebo, dtype=float),
        chol, scenario.n_per_arm, times,
    )
    subjects += _mvn_subjects(
        rng, "a", "active", scenario.active_means(), chol, scenario.n_per_arm, times
    )
    return TrialDataset(
        schedule=scenario.schedule, subjects=tuple(subjects), time_mode="scheduled"
    ).validate()


# ---------------------------------------------------------------------------
# family 2: pool resampling with effect transforms

CS2_SCHEDULE = VisitSchedule(times=(0.0, 28.0, 52.0, 80.0))
POOL_TARGET_MEANS = np.array([5.18, 5.69, 6.43, 7.01])
POOL_VISIT_COUNTS = (1024, 889, 833, 769)

POOL_EFFECTS = ("none", "stable_benefit", "reduced_decline_20", "delay_16w", "slowed_20")
IMPLEMENTATIONS = ("mean_level", "subject_level")


def synthetic_pool(n_subjects: int = 1024, seed: int = 202406) -> TrialDataset:
    """Synthetic historical pool over weeks 0/28/52/80 with monotone dropout.

    Values follow a multivariate-normal baseline-plus-change model whose
    marginal means match the target pointwise means; dropout ranks are drawn
    independently of the values, with per-visit retention matching the target
    counts proportionally.
    """
    rng = make_rng(seed)
    mean = POOL_TARGET_MEANS
    sd_base = 2.5
    sd_change = np.array([1.3, 1.9, 2.5])
    corr_change = np.array([[1.0, 0.6, 0.5], [0.6, 1.0, 0.7], [0.5, 0.7, 1.0]])
    cov_change = np.outer(sd_change, sd_change) * corr_change
    # y = (y0, y0 + c1, y0 + c2, y0 + c3): assemble the joint covariance
    transform = np.zeros((4, 4))
    transform[:, 0] = 1.0
    transform[1:, 1:] = np.eye(3)
    cov_parts = np.zeros((4, 4))
    cov_parts[0, 0] = sd_base**2
    cov_parts[1:, 1:] = cov_change
    cov = transform @ cov_parts @ transform.T
    chol = np.linalg.cholesky(cov)
    draws = mean + rng.standard_normal((n_subjects, 4)) @ chol.T
    ranks = rng.permutation(n_subjects)
    times = CS2_SCHEDULE.times
    subjects = []
    for i in range(n_subjects):
        obs = [(0, times[0], float(draws[i, 0]))]
        for j in range(1, 4):
            keep = POOL_VISIT_COUNTS[j] * n_subjects / POOL_VISIT_COUNTS[0]
            if ranks[i] < round(keep):
                obs.append((j, times[j], float(draws[i, j])))
        subjects.append(
            SubjectRecord(
                subject_id=f"h{i:05d}", arm="placebo", group=None, observations=tuple(obs)
            )
        )
    return TrialDataset(
        schedule=CS2_SCHEDULE, subjects=tuple(subjects), time_mode="scheduled"
    ).validate(require_both_arms=False)


def estimate_pool_deltas(pool: TrialDataset) -> np.ndarray:
    """Per-visit mean change from baseline over subjects observed at the visit.

    Matches maximum likelihood under independent per-visit change models;
    subjects without post-baseline data do not contribute.
    """
    m = pool.schedule.m
    sums = np.zeros(m)
    counts = np.zeros(m)
    for s in pool.subjects:
        values = dict((v, y) for v, _, y in s.observations)
        if 0 not in values:
            continue
        for j in range(1, m + 1):
            if j in values:
                sums[j - 1] += values[j] - values[0]
                counts[j - 1] += 1
    if np.any(counts == 0):
        raise ValidationError("a post-baseline visit has no change-from-baseline data")
    return sums / counts


def delta_curve(deltas, schedule: VisitSchedule = CS2_SCHEDULE):
    """Linear interpolant of the mean change-from-baseline values, anchored at
    zero change at time zero."""
    knots = schedule.as_array()
    values = np.concatenate(([0.0], np.asarray(deltas, dtype=float)))
    return build_interpolant("linear", knots, values)


def _delay_16w_time(t: float) -> float:
    # delay of 16 weeks building linearly until week 40
    return t - min(t, 40.0) / 40.0 * 16.0


def apply_effect_mean_level(
    subject: SubjectRecord, effect: str, deltas, schedule: VisitSchedule = CS2_SCHEDULE
) -> SubjectRecord:
    """Shift a subject's post-baseline values by the population-mean effect.

    Every observed post-baseline value moves by the same per-visit constant;
    the baseline is untouched.
    """
    if effect not in POOL_EFFECTS:
        raise ContractError(f"unknown effect {effect!r}")
    if effect == "none":
        return subject
    deltas = np.asarray(deltas, dtype=float)
    curve = delta_curve(deltas, schedule)
    new_obs = []
    for v, t, y in subject.observations:
        if v == 0:
            new_obs.append((v, t, y))
            continue
        if effect == "stable_benefit":
            shift = -0.2 * deltas[-1]
        elif effect == "reduced_decline_20":
            shift = -0.2 * deltas[v - 1]
        elif effect == "delay_16w":
            shift = -(deltas[v - 1] - curve(_delay_16w_time(t)))
        else:  # slowed_20
            shift = -(deltas[v - 1] - curve(0.8 * t))
        new_obs.append((v, t, y + shift))
    return SubjectRecord(
        subject_id=subject.subject_id,
        arm=subject.arm,
        group=subject.group,
        observations=tuple(new_obs),
    )


def apply_effect_subject_level(
    subject: SubjectRecord,
    effect: str,
    schedule: VisitSchedule = CS2_SCHEDULE,
    scale_baseline: bool = True,
) -> SubjectRecord:
    """Transform a subject's own trajectory (different benefit per subject).

    Time-shaped effects re-read the subject's linear interpolant at
    transformed times; missing visits remain missing, and a subject with a
    single observation is unchanged under time transforms.  The 20% reduced
    decline multiplies every value including baseline; pass
    ``scale_baseline=False`` to scale post-baseline change instead.
    """
    if effect not in POOL_EFFECTS:
        raise ContractError(f"unknown effect {effect!r}")
    if effect == "stable_benefit":
        raise ContractError("no subject-level transform exists for the stable benefit")
    if effect == "none":
        return subject
    idx, times, values = observed_rows(subject)
    if effect == "reduced_decline_20":
        if scale_baseline:
            new_values = 0.8 * values
        else:
            base = values[idx == 0]
            if base.size == 0:
                raise ContractError("change-only scaling needs a baseline observation")
            new_values = base[0] + 0.8 * (values - base[0])
    else:
        if len(values) == 1:
            new_values = values.copy()
        else:
            own = build_interpolant("linear", times, values)
            if effect == "delay_16w":
                new_times = np.array([_delay_16w_time(t) for t in times])
            else:  # slowed_20
                new_times = 0.8 * times
            new_values = own(new_times)
    new_obs = tuple(
        (int(v), float(t), float(y)) for v, t, y in zip(idx, times, new_values)
    )
    return SubjectRecord(
        subject_id=subject.subject_id,
        arm=subject.arm,
        group=subject.group,
        observations=new_obs,
    )


@dataclass(frozen=True)
class PoolScenario:
    """Pool-resampling scenario: which effect, how implemented, arm size."""

    pool: TrialDataset
    effect: str
    implementation: str
    n_per_arm: int
    deltas: Optional[np.ndarray] = None
    scale_baseline: bool = True

    def __post_init__(self):
        if self.effect not in POOL_EFFECTS:
            raise ValidationError(f"unknown effect {self.effect!r}")
        if self.implementation not in IMPLEMENTATIONS:
            raise ValidationError(f"unknown implementation {self.implementation!r}")
        if self.effect == "stable_benefit" and self.implementation == "subject_level":
            raise ValidationError(
                "the stable benefit has no subject-level implementation"
            )
        if self.deltas is None:
            object.__setattr__(self, "deltas", estimate_pool_deltas(self.pool))
        else:
            object.__setattr__(self, "deltas", np.asarray(self.deltas, dtype=float))
        if self.deltas.shape != (self.pool.schedule.m,):
            raise ValidationError("deltas must cover every post-baseline visit")

    @property
    def schedule(self) -> VisitSchedule:
        return self.pool.schedule


def resample_pool(
    pool: TrialDataset,
    n_per_arm: int,
    seed: int,
    effect: str = "none",
    implementation: str = "mean_level",
    deltas=None,
    scale_baseline: bool = True,
) -> TrialDataset:
    """Draw 2*n subjects with replacement; arms assigned by draw order.

    The first ``n_per_arm`` draws form the placebo arm; the rest are assigned
    to the active arm and passed through the configured effect transform.
    Resampled subjects receive fresh ids.
    """
    rng = make_rng(seed)
    picks = rng.integers(0, len(pool.subjects), size=2 * n_per_arm)
    if effect != "none" and implementation == "mean_level" and deltas is None:
        deltas = estimate_pool_deltas(pool)
    subjects = []
    for i, pick in enumerate(picks):
        src = pool.subjects[pick]
        arm = "placebo" if i < n_per_arm else "active"
        subj = SubjectRecord(
            subject_id=f"r{i:05d}", arm=arm, group=src.group, observations=src.observations
        )
        if arm == "active" and effect != "none":
            if implementation == "mean_level":
                subj = apply_effect_mean_level(subj, effect, deltas, pool.schedule)
            else:
                subj = apply_effect_subject_level(
                    subj, effect, pool.schedule, scale_baseline=scale_baseline
                )
        subjects.append(subj)
    return TrialDataset(
        schedule=pool.schedule, subjects=tuple(subjects), time_mode=pool.time_mode
    ).validate()


def generate_pool_trial(scenario: PoolScenario, seed: int) -> TrialDataset:
    return resample_pool(
        scenario.pool,
        scenario.n_per_arm,
        seed,
        effect=scenario.effect,
        implementation=scenario.implementation,
        deltas=scenario.deltas,
        scale_baseline=scenario.scale_baseline,
    )


# ---------------------------------------------------------------------------
# family 3: covariate-model trials (initial improvement; subgroup rates)

CS3_SCHEDULE = VisitSchedule(times=(0.0, 12.0, 26.0, 39.0, 52.0, 65.0, 78.0))
# natural-history anchor values of a severity score over 78 weeks
CS3_NATURAL_VALUES = np.array([2.0, 2.42, 3.08, 3.85, 4.78, 5.85, 7.08])
CS3_SLOWING = 0.7
CS3_SUBGROUP_RATE = 0.1
CS3_IMPROVEMENT = {12.0: -0.45, 26.0: -0.25}

_CS3_SD = np.sqrt(np.array([2.2, 2.6, 3.0, 3.5, 4.1, 4.8, 5.6]))
CS3_COVARIANCE = np.outer(_CS3_SD, _CS3_SD) * (0.3 * np.eye(7) + 0.7)


def _cs3_curve():
    return build_interpolant("natural_cubic", CS3_SCHEDULE.as_array(), CS3_NATURAL_VALUES)


def cs3_improvement_trial(n_per_arm: int, seed: int) -> TrialDataset:
    """78-week trial: 30% slowing in the active arm plus identical transient
    improvements at weeks 12 and 26 in both arms."""
    curve = _cs3_curve()
    t = CS3_SCHEDULE.as_array()
    offsets = np.array([CS3_IMPROVEMENT.get(tj, 0.0) for tj in t])
    placebo_means = curve(t) + offsets
    active_means = curve(CS3_SLOWING * t) + offsets
    chol = np.linalg.cholesky(CS3_COVARIANCE)
    rng = make_rng(seed)
    subjects = _mvn_subjects(rng, "p", "placebo", placebo_means, chol, n_per_arm, CS3_SCHEDULE.times)
    subjects += _mvn_subjects(rng, "a", "active", active_means, chol, n_per_arm, CS3_SCHEDULE.times)
    return TrialDataset(
        schedule=CS3_SCHEDULE, subjects=tuple(subjects), time_mode="scheduled"
    ).validate()


def cs3_subgroup_trial(n_per_arm: int, seed: int) -> TrialDataset:
    """78-week trial with two equal-sized baseline subgroups, group 2
    progressing 10% slower than group 1, and a 30% slowing in the active arm
    of both groups."""
    curve = _cs3_curve()
    t = CS3_SCHEDULE.as_array()
    chol = np.linalg.cholesky(CS3_COVARIANCE)
    rng = make_rng(seed)
    subjects = []
    half = n_per_arm // 2
    sizes = {("placebo", "group1"): n_per_arm - half, ("placebo", "group2"): half,
             ("active", "group1"): n_per_arm - half, ("active", "group2"): half}
    for (arm, group), n in sizes.items():
        rate = 1.0 - CS3_SUBGROUP_RATE if group == "group2" else 1.0
        factor = rate * (CS3_SLOWING if arm == "active" else 1.0)
        means = curve(factor * t)
        prefix = f"{arm[0]}{group[-1]}_"
        batch = _mvn_subjects(rng, prefix, arm, means, chol, n, CS3_SCHEDULE.times)
        subjects += [
            SubjectRecord(s.subject_id, s.arm, group, s.observations) for s in batch
        ]
    return TrialDataset(
        schedule=CS3_SCHEDULE, subjects=tuple(subjects), time_mode="scheduled"
    ).validate()
