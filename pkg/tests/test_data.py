"""CSV ingestion, dataset validation, and kernel packing."""

import numpy as np
import pytest

from pmrm.data import (
    SubjectRecord,
    TrialDataset,
    VisitSchedule,
    load_long_csv,
    observed_rows,
    pack_dataset,
    write_long_csv,
)
from pmrm.errors import ParseError, ValidationError

SCHED = VisitSchedule(times=(0.0, 26.0, 52.0, 78.0, 104.0))


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


HEADER = "subject_id,arm,group,visit,time,value\n"


class TestSchedule:
    def test_accessors(self):
        assert SCHED.m == 4
        assert SCHED.times[0] == 0.0

    @pytest.mark.parametrize("times", [(0.0,), (1.0, 2.0), (0.0, 2.0, 2.0), (0.0, 3.0, 1.0)])
    def test_invalid_schedules(self, times):
        with pytest.raises(ValidationError):
            VisitSchedule(times=times)


class TestLoadCsv:
    def test_round_trip_complete(self, tmp_path):
        rows = [HEADER]
        for sid, arm in (("s1", "placebo"), ("s2", "active")):
            for v in range(3):
                rows.append(f"{sid},{arm},,{v},{SCHED.times[v]},{20 + v}\n")
        ds = load_long_csv(write(tmp_path, "".join(rows)), SCHED)
        assert ds.n_subjects == 2
        assert ds.n_observations == 6
        out = tmp_path / "out.csv"
        write_long_csv(ds, out)
        again = load_long_csv(out, SCHED)
        obs = lambda d: sorted((s.subject_id, s.arm, o) for s in d.subjects for o in s.observations)
        assert obs(again) == obs(ds)

    def test_missing_visit_passthrough(self, tmp_path):
        text = HEADER + "".join(
            f"s1,placebo,,{v},{SCHED.times[v]},{20 + v}\n" for v in (0, 1, 3)
        )
        text += "s2,active,,0,0.0,19.5\n"
        ds = load_long_csv(write(tmp_path, text), SCHED)
        s1 = next(s for s in ds.subjects if s.subject_id == "s1")
        assert s1.visit_indices == (0, 1, 3)

    def test_empty_value_cell_dropped(self, tmp_path):
        text = HEADER + "s1,placebo,,0,0.0,20\ns1,placebo,,1,26.0,\ns2,active,,0,0.0,19\n"
        ds = load_long_csv(write(tmp_path, text), SCHED)
        s1 = next(s for s in ds.subjects if s.subject_id == "s1")
        assert s1.visit_indices == (0,)

    def test_unknown_arm_names_line(self, tmp_path):
        text = HEADER + "s1,placebo,,0,0.0,20\ns2,treatmnt,,0,0.0,19\n"
        with pytest.raises(ParseError, match=":3:"):
            load_long_csv(write(tmp_path, text), SCHED)

    def test_non_numeric_value_names_line(self, tmp_path):
        text = HEADER + "s1,placebo,,0,0.0,twenty\n"
        with pytest.raises(ParseError, match=":2:"):
            load_long_csv(write(tmp_path, text), SCHED)

    def test_duplicate_subject_visit_rejected(self, tmp_path):
        text = HEADER + "s1,placebo,,0,0.0,20\ns1,placebo,,0,0.0,21\ns2,active,,0,0.0,19\n"
        with pytest.raises(ValidationError, match="duplicate"):
            load_long_csv(write(tmp_path, text), SCHED)

    def test_subject_with_no_values_rejected(self, tmp_path):
        text = HEADER + "s1,placebo,,0,0.0,\ns2,active,,0,0.0,19\n"
        with pytest.raises(ValidationError, match="s1"):
            load_long_csv(write(tmp_path, text), SCHED)

    def test_group_column_optional(self, tmp_path):
        text = "subject_id,arm,visit,time,value\ns1,placebo,0,0.0,20\ns2,active,0,0.0,19\n"
        ds = load_long_csv(write(tmp_path, text), SCHED)
        assert all(s.group is None for s in ds.subjects)

    def test_group_values_parsed(self, tmp_path):
        text = HEADER + "s1,placebo,group2,0,0.0,20\ns2,active,group1,0,0.0,19\n"
        ds = load_long_csv(write(tmp_path, text), SCHED)
        assert ds.subjects[0].group == "group2"

    def test_scheduled_time_mismatch_rejected(self, tmp_path):
        text = HEADER + "s1,placebo,,1,25.0,20\ns2,active,,0,0.0,19\n"
        with pytest.raises(ValidationError, match="does not match"):
            load_long_csv(write(tmp_path, text), SCHED)

    def test_actual_time_mode_allows_off_schedule(self, tmp_path):
        text = HEADER + "s1,placebo,,1,25.0,20\ns2,active,,0,0.0,19\n"
        ds = load_long_csv(write(tmp_path, text), SCHED, time_mode="actual")
        assert ds.subjects[0].observations[0][1] == 25.0


class TestObservedRows:
    def test_partial_subject(self):
        s = SubjectRecord("s", "placebo", None, ((2, 52.0, 21.0), (0, 0.0, 20.0)))
        idx, times, values = observed_rows(s)
        assert idx.tolist() == [0, 2]
        assert times.tolist() == [0.0, 52.0]
        assert values.tolist() == [20.0, 21.0]

    def test_complete_subject_identity(self):
        s = SubjectRecord(
            "s", "active", None, tuple((v, SCHED.times[v], 1.0 * v) for v in range(5))
        )
        idx, _, _ = observed_rows(s)
        assert idx.tolist() == list(range(5))

    def test_no_baseline_subject(self):
        s = SubjectRecord("s", "active", None, ((1, 26.0, 1.0), (3, 78.0, 2.0)))
        idx, _, _ = observed_rows(s)
        assert idx.tolist() == [1, 3]
        assert not s.has_baseline()


class TestDatasetInvariants:
    def test_both_arm_requirement(self):
        s = SubjectRecord("s", "placebo", None, ((0, 0.0, 1.0),))
        ds = TrialDataset(SCHED, (s,))
        with pytest.raises(ValidationError, match="both arms"):
            ds.validate()
        ds.validate(require_both_arms=False)  # pools are allowed

    def test_visit_out_of_range(self):
        s = SubjectRecord("s", "placebo", None, ((9, 0.0, 1.0),))
        t = SubjectRecord("t", "active", None, ((0, 0.0, 1.0),))
        with pytest.raises(ValidationError, match="outside"):
            TrialDataset(SCHED, (s, t)).validate()

    def test_baseline_flagging(self):
        a = SubjectRecord("a", "placebo", None, ((0, 0.0, 1.0),))
        b = SubjectRecord("b", "active", None, ((1, 26.0, 1.0),))
        ds = TrialDataset(SCHED, (a, b)).validate()
        assert ds.subjects_without_baseline() == ("b",)


class TestPacking:
    def make_dataset(self):
        subjects = [
            SubjectRecord("s1", "placebo", None, ((0, 0.0, 1.0), (1, 26.0, 2.0))),
            SubjectRecord("s2", "active", "group2", ((0, 0.0, 3.0), (2, 52.0, 4.0))),
            SubjectRecord("s3", "placebo", None, ((0, 0.0, 5.0), (1, 26.0, 6.0))),
            SubjectRecord("s4", "active", None, ((1, 26.0, 7.0),)),
        ]
        return TrialDataset(SCHED, tuple(subjects)).validate()

    def test_pattern_grouping(self):
        packed = pack_dataset(self.make_dataset())
        # patterns sorted by content: (0,1) x2 subjects, (0,2), (1,)
        assert packed.pat_counts.tolist() == [2, 1, 1]
        assert packed.pat_cols.tolist() == [0, 1, 0, 2, 1]
        assert packed.n_observations == 7
        # contiguous pattern blocks: y of the (0,1) block first
        assert packed.y[:4].tolist() == [1.0, 2.0, 5.0, 6.0]

    def test_profiles(self):
        packed = pack_dataset(self.make_dataset())
        by_subject = dict(zip(packed.subject_ids, packed.subject_slices))
        lo, hi = by_subject["s2"]
        assert packed.profile[lo:hi].tolist() == [3, 3]  # active, group2
        lo, hi = by_subject["s1"]
        assert packed.profile[lo:hi].tolist() == [0, 0]

    def test_cooccurrence_counts(self):
        packed = pack_dataset(self.make_dataset())
        cooc = packed.cooccurrence()
        assert cooc[0, 1] == 2
        assert cooc[0, 2] == 1
        assert cooc[1, 1] == 3
        assert cooc[3, 3] == 0

    def test_union_of_patterns_covers_complete_subject(self):
        ds = self.make_dataset()
        packed = pack_dataset(ds)
        seen = set()
        for p in range(packed.pat_counts.shape[0]):
            seen.update(
                packed.pat_cols[packed.pat_col_off[p] : packed.pat_col_off[p + 1]].tolist()
            )
        assert seen == {0, 1, 2}
