"""Longitudinal trial data model, long-format CSV ingestion, and packing.

Datasets are immutable after construction and safe to share across parallel
workers.  The sole ingestion format is a long CSV with one row per
subject-visit and header ``subject_id,arm,group,visit,time,value`` (the
``group`` column may be absent or empty).  Missing outcomes are absent rows or
empty ``value`` cells; there are no sentinel numbers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ParseError, ValidationError

ARMS = ("placebo", "active")
GROUPS = ("group1", "group2")
TIME_MODES = ("scheduled", "actual")

_HEADER = ["subject_id", "arm", "group", "visit", "time", "value"]
_HEADER_NO_GROUP = ["subject_id", "arm", "visit", "time", "value"]


@dataclass(frozen=True)
class VisitSchedule:
    """Ordered visit times since baseline; anchors visit indices to times."""

    times: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        if len(times) < 2:
            raise ValidationError("schedule needs a baseline and at least one visit")
        if times[0] != 0.0:
            raise ValidationError("schedule must start at time 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("schedule times must be strictly increasing")

    @property
    def m(self) -> int:
        """Number of post-baseline visits."""
        return len(self.times) - 1

    def as_array(self) -> np.ndarray:
        return np.asarray(self.times, dtype=float)


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's arm, optional subgroup, and observed (visit, time, value) rows."""

    subject_id: str
    arm: str
    group: Optional[str]
    observations: tuple  # ordered (visit_index, time, value) triples

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ValidationError(f"subject {self.subject_id}: unknown arm {self.arm!r}")
        if self.group is not None and self.group not in GROUPS:
            raise ValidationError(
                f"subject {self.subject_id}: unknown group {self.group!r}"
            )
        obs = tuple(sorted(((int(v), float(t), float(y)) for v, t, y in self.observations)))
        object.__setattr__(self, "observations", obs)
        if not obs:
            raise ValidationError(f"subject {self.subject_id} has no observations")
        visits = [v for v, _, _ in obs]
        if len(set(visits)) != len(visits):
            raise ValidationError(
                f"subject {self.subject_id} has duplicate visit indices"
            )

    @property
    def visit_indices(self) -> tuple:
        return tuple(v for v, _, _ in self.observations)

    def has_baseline(self) -> bool:
        return self.observations[0][0] == 0


def observed_rows(subject: SubjectRecord):
    """Aligned (visit index set, time vector, value vector), sorted by visit.

    The index set identifies which rows/columns of the full residual
    covariance apply to this subject.
    """
    idx = np.array([v for v, _, _ in subject.observations], dtype=np.int64)
    times = np.array([t for _, t, _ in subject.observations], dtype=float)
    values = np.array([y for _, _, y in subject.observations], dtype=float)
    return idx, times, values


@dataclass(frozen=True)
class TrialDataset:
    """A schedule plus subject records; ``time_mode`` selects how times are read.

    In ``scheduled`` mode every observation time must equal the schedule time
    of its visit index; ``actual`` mode allows arbitrary nonnegative times
    (and subjects without a baseline row).
    """

    schedule: VisitSchedule
    subjects: tuple
    time_mode: str = "scheduled"

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        if self.time_mode not in TIME_MODES:
            raise ValidationError(f"unknown time mode {self.time_mode!r}")

    def validate(self, require_both_arms: bool = True) -> "TrialDataset":
        """Check dataset-level invariants; returns self for chaining.

        Subject pools (single-arm historical data) are validated with
        ``require_both_arms=False``; trial datasets used for estimation
        require at least one subject per arm.
        """
        m = self.schedule.m
        seen = set()
        for s in self.subjects:
            if s.subject_id in seen:
                raise ValidationError(f"duplicate subject id {s.subject_id!r}")
            seen.add(s.subject_id)
            for v, t, _ in s.observations:
                if v < 0 or v > m:
                    raise ValidationError(
                        f"subject {s.subject_id}: visit index {v} outside [0, {m}]"
                    )
                if self.time_mode == "scheduled":
                    if t != self.schedule.times[v]:
                        raise ValidationError(
                            f"subject {s.subject_id}: time {t} does not match "
                            f"schedule time {self.schedule.times[v]} of visit {v}"
                        )
                elif t < 0:
                    raise ValidationError(
                        f"subject {s.subject_id}: negative observation time {t}"
                    )
        if require_both_arms:
            arms = {s.arm for s in self.subjects}
            if arms != set(ARMS):
                raise ValidationError("dataset must contain subjects in both arms")
        return self

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_observations(self) -> int:
        return sum(len(s.observations) for s in self.subjects)

    def subjects_without_baseline(self) -> tuple:
        """Ids of subjects lacking a baseline observation (permitted, flagged)."""
        return tuple(s.subject_id for s in self.subjects if not s.has_baseline())


def load_long_csv(path, schedule: VisitSchedule, time_mode: str = "scheduled") -> TrialDataset:
    """Read a long-format CSV into a validated :class:`TrialDataset`.

    Rows with an empty ``value`` cell are treated as missing and dropped.
    Raises :class:`ParseError` naming the line for malformed rows and
    :class:`ValidationError` for structural problems (duplicate subject-visit
    pairs, subjects with no usable rows).
    """
    rows_by_subject: dict = {}
    order: list = []
    empty_subjects: set = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header == _HEADER:
            has_group = True
        elif header == _HEADER_NO_GROUP:
            has_group = False
        else:
            raise ParseError(
                f"{path}: expected header {','.join(_HEADER)} "
                f"(group column optional), got {','.join(header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields")
            if has_group:
                sid, arm, group, visit, time, value = (c.strip() for c in row)
            else:
                sid, arm, visit, time, value = (c.strip() for c in row)
                group = ""
            if arm not in ARMS:
                raise ParseError(f"{path}:{lineno}: unknown arm {arm!r}")
            if group not in ("",) + GROUPS:
                raise ParseError(f"{path}:{lineno}: unknown group {group!r}")
            try:
                v = int(visit)
                t = float(time)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric visit/time") from None
            if sid not in rows_by_subject:
                rows_by_subject[sid] = {"arm": arm, "group": group or None, "obs": {}}
                order.append(sid)
            rec = rows_by_subject[sid]
            if rec["arm"] != arm:
                raise ParseError(f"{path}:{lineno}: subject {sid!r} changes arm")
            if not value:
                empty_subjects.add(sid)
                continue
            try:
                y = float(value)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value {value!r}") from None
            if v in rec["obs"]:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate (subject, visit) pair ({sid!r}, {v})"
                )
            rec["obs"][v] = (t, y)
    subjects = []
    for sid in order:
        rec = rows_by_subject[sid]
        if not rec["obs"]:
            raise ValidationError(
                f"{path}: subject {sid!r} has no observed values"
            )
        obs = tuple((v, t, y) for v, (t, y) in sorted(rec["obs"].items()))
        subjects.append(
            SubjectRecord(subject_id=sid, arm=rec["arm"], group=rec["group"], observations=obs)
        )
    if not subjects:
        raise ValidationError(f"{path}: no subjects found")
    return TrialDataset(schedule=schedule, subjects=tuple(subjects), time_mode=time_mode).validate()


def write_long_csv(dataset: TrialDataset, path) -> None:
    """Serialize a dataset back to the long CSV format (round-trips observations)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        for s in dataset.subjects:
            for v, t, y in s.observations:
                writer.writerow([s.subject_id, s.arm, s.group or "", v, repr(t), repr(y)])


@dataclass(frozen=True)
class PackedDataset:
    """Flat-array dataset layout for likelihood kernels.

    Subjects are sorted by observation pattern so each pattern's block of
    observations is contiguous; within a pattern every subject contributes
    the same number of observations, ordered by visit.
    """

    n_visits: int
    time_mode: str
    y: np.ndarray          # (n_obs,) observed values
    times: np.ndarray      # (n_obs,) observation times
    visit_idx: np.ndarray  # (n_obs,) int64 visit indices
    profile: np.ndarray    # (n_obs,) int64, 2*arm + (group == group2)
    pat_off_obs: np.ndarray
    pat_counts: np.ndarray
    pat_cols: np.ndarray
    pat_col_off: np.ndarray
    subject_ids: tuple
    subject_slices: tuple  # (start, stop) into the flat arrays per subject
    n_subjects: int = field(default=0)
    n_observations: int = field(default=0)

    def cooccurrence(self) -> np.ndarray:
        """Count of subjects observing each visit pair (identifiability check)."""
        d = self.n_visits
        counts = np.zeros((d, d), dtype=np.int64)
        for p in range(self.pat_counts.shape[0]):
            cols = self.pat_cols[self.pat_col_off[p] : self.pat_col_off[p + 1]]
            counts[np.ix_(cols, cols)] += self.pat_counts[p]
        return counts


def profile_code(arm: str, group: Optional[str]) -> int:
    """Row index into the 4-row mean table: (placebo, active) x (group1/none, group2)."""
    return 2 * (1 if arm == "active" else 0) + (1 if group == "group2" else 0)


def pack_dataset(dataset: TrialDataset) -> PackedDataset:
    """Flatten a dataset into kernel-ready arrays grouped by missingness pattern."""
    patterns: dict = {}
    per_subject = []
    for s in dataset.subjects:
        idx, times, values = observed_rows(s)
        key = tuple(int(v) for v in idx)
        patterns.setdefault(key, len(patterns))
        per_subject.append((key, s, idx, times, values))
    # deterministic pattern order: by content
    ordered_keys = sorted(patterns)
    pat_rank = {k: i for i, k in enumerate(ordered_keys)}
    per_subject.sort(key=lambda rec: (pat_rank[rec[0]], rec[1].subject_id))

    y_parts, t_parts, v_parts, prof = [], [], [], []
    subject_ids, subject_slices = [], []
    pat_counts = np.zeros(len(ordered_keys), dtype=np.int64)
    pat_off_obs = np.zeros(len(ordered_keys), dtype=np.int64)
    offset = 0
    cur = -1
    for key, s, idx, times, values in per_subject:
        r = pat_rank[key]
        if r != cur:
            pat_off_obs[r] = offset
            cur = r
        pat_counts[r] += 1
        k = idx.shape[0]
        subject_ids.append(s.subject_id)
        subject_slices.append((offset, offset + k))
        y_parts.append(values)
        t_parts.append(times)
        v_parts.append(idx)
        prof.append(np.full(k, profile_code(s.arm, s.group), dtype=np.int64))
        offset += k
    pat_cols = np.concatenate([np.array(k, dtype=np.int64) for k in ordered_keys])
    pat_col_off = np.zeros(len(ordered_keys) + 1, dtype=np.int64)
    np.cumsum([len(k) for k in ordered_keys], out=pat_col_off[1:])
    return PackedDataset(
        n_visits=dataset.schedule.m + 1,
        time_mode=dataset.time_mode,
        y=np.concatenate(y_parts),
        times=np.concatenate(t_parts),
        visit_idx=np.concatenate(v_parts),
        profile=np.concatenate(prof),
        pat_off_obs=pat_off_obs,
        pat_counts=pat_counts,
        pat_cols=pat_cols,
        pat_col_off=pat_col_off,
        subject_ids=tuple(subject_ids),
        subject_slices=tuple(subject_slices),
        n_subjects=len(subject_ids),
        n_observations=offset,
    )
