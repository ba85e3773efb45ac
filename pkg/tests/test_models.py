"""Mean-structure evaluation, design selectors, starting values, invariants."""

import numpy as np
import pytest

from pmrm.data import VisitSchedule, pack_dataset
from pmrm.errors import ContractError, InitializationError
from pmrm.models import (
    MeanModelSpec,
    ParameterVector,
    design_vector,
    flatten,
    initial_parameters,
    mean_table,
    mean_value,
    no_effect_beta,
    param_names,
    predicted_means,
    unflatten,
)
from pmrm.simulation import CS1_PLACEBO_MEANS, Cs1Scenario, generate_cs1_trial

SCHED = VisitSchedule(times=(0.0, 6.0, 12.0, 18.0, 24.0, 36.0))
ALPHA = CS1_PLACEBO_MEANS


def spec_of(variant, **kw):
    kind = kw.pop("interpolation_kind", "linear")
    if variant == "clda":
        return MeanModelSpec("clda", SCHED)
    return MeanModelSpec(variant, SCHED, interpolation_kind=kind, **kw)


class TestMeanValue:
    def test_prop_decline_outcome_scaling(self):
        p = ParameterVector(alpha=ALPHA, beta=[0.8])
        got = mean_value(spec_of("prop_decline"), p, "active", None, 5, 36.0)
        assert got == pytest.approx(0.8 * (27.4 - 19.6) + 19.6)  # 25.84

    def test_time_pmrm_identity_at_unit_factors(self):
        p = ParameterVector(alpha=ALPHA, beta=np.ones(5))
        spec = spec_of("time_pmrm")
        for j, t in enumerate(SCHED.times):
            got = mean_value(spec, p, "active", None, j, t)
            assert got == pytest.approx(ALPHA[j], rel=1e-12)

    def test_prop_slowing_time_scaling(self):
        p = ParameterVector(alpha=ALPHA, beta=[0.8])
        got = mean_value(spec_of("prop_slowing"), p, "active", None, 4, 24.0)
        assert got == pytest.approx(22.92)  # linear curve at 19.2 months

    def test_delay_constant_shift(self):
        p = ParameterVector(alpha=ALPHA, beta=[4.0])
        got = mean_value(spec_of("delay_constant"), p, "active", None, 3, 18.0)
        assert got == pytest.approx(21.5)  # curve at 14 months

    def test_subgroup_rate_zero_degenerates_to_prop_slowing(self):
        ps = ParameterVector(alpha=ALPHA, beta=[0.8])
        sub = ParameterVector(alpha=ALPHA, beta=[0.8], rho=0.0)
        for arm in ("placebo", "active"):
            for group in ("group1", "group2"):
                for j, t in enumerate(SCHED.times):
                    a = mean_value(spec_of("prop_slowing"), ps, arm, group, j, t)
                    b = mean_value(spec_of("prop_slowing_subgroup"), sub, arm, group, j, t)
                    assert a == pytest.approx(b, rel=1e-14)

    def test_subgroup_rescales_both_arms(self):
        p = ParameterVector(alpha=ALPHA, beta=[0.8], rho=0.1)
        spec = spec_of("prop_slowing_subgroup", interpolation_kind="linear")
        got = mean_value(spec, p, "placebo", "group2", 4, 24.0)
        lin = lambda t: np.interp(t, SCHED.times, ALPHA)
        assert got == pytest.approx(lin(0.9 * 24.0))
        got_active = mean_value(spec, p, "active", "group2", 4, 24.0)
        assert got_active == pytest.approx(lin(0.8 * 0.9 * 24.0))

    def test_improvement_offsets_hit_both_arms(self):
        spec = MeanModelSpec(
            "prop_slowing_with_improvement",
            SCHED,
            interpolation_kind="linear",
            improvement_visits=(6.0, 12.0),
        )
        p = ParameterVector(alpha=ALPHA, beta=[0.8], delta=[-0.5, -0.3])
        for arm, base in (("placebo", 20.5), ("active", np.interp(4.8, SCHED.times, ALPHA))):
            assert mean_value(spec, p, arm, None, 1, 6.0) == pytest.approx(base - 0.5)
        # unlisted visit carries no offset
        assert mean_value(spec, p, "placebo", None, 3, 18.0) == pytest.approx(22.7)

    def test_delay_two_param_block_structure(self):
        spec = spec_of("delay_two_param", delay_plateau_visit=3)
        p = ParameterVector(alpha=ALPHA, beta=[1.0, 4.0])
        lin = lambda t: np.interp(t, SCHED.times, ALPHA)
        assert mean_value(spec, p, "active", None, 1, 6.0) == pytest.approx(lin(5.0))
        assert mean_value(spec, p, "active", None, 2, 12.0) == pytest.approx(lin(11.0))
        assert mean_value(spec, p, "active", None, 3, 18.0) == pytest.approx(lin(14.0))
        assert mean_value(spec, p, "active", None, 5, 36.0) == pytest.approx(lin(32.0))

    def test_clda_reproduces_visit_means_exactly(self):
        p = ParameterVector(alpha=ALPHA, clda_active=ALPHA[1:] - 1.0)
        spec = spec_of("clda")
        for j in range(1, 6):
            assert mean_value(spec, p, "placebo", None, j, SCHED.times[j]) == ALPHA[j]
            assert mean_value(spec, p, "active", None, j, SCHED.times[j]) == ALPHA[j] - 1.0
        assert mean_value(spec, p, "active", None, 0, 0.0) == ALPHA[0]

    def test_layout_mismatch_raises(self):
        p = ParameterVector(alpha=ALPHA, beta=[0.8, 0.9])
        with pytest.raises(ContractError):
            mean_value(spec_of("prop_slowing"), p, "active", None, 1, 6.0)


class TestNullCollapse:
    @pytest.mark.parametrize(
        "variant,kw",
        [
            ("prop_decline", {}),
            ("time_pmrm", {}),
            ("prop_slowing", {}),
            ("delay_general", {}),
            ("delay_constant", {}),
            ("delay_two_param", {"delay_plateau_visit": 2}),
            ("prop_slowing_subgroup", {}),
        ],
    )
    def test_no_effect_value_gives_arm_independent_means(self, variant, kw):
        spec = spec_of(variant, interpolation_kind="natural_cubic", **kw)
        p = ParameterVector(
            alpha=ALPHA,
            beta=no_effect_beta(spec),
            rho=0.0 if variant == "prop_slowing_subgroup" else None,
        )
        for j, t in enumerate(SCHED.times):
            a = mean_value(spec, p, "active", None, j, t)
            b = mean_value(spec, p, "placebo", None, j, t)
            assert a == pytest.approx(b, rel=1e-12)
            assert a == pytest.approx(ALPHA[j], rel=1e-12)

    def test_prop_decline_zero_beta_freezes_active_arm(self):
        p = ParameterVector(alpha=ALPHA, beta=[0.0])
        spec = spec_of("prop_decline")
        for j, t in enumerate(SCHED.times):
            assert mean_value(spec, p, "active", None, j, t) == pytest.approx(ALPHA[0])


class TestReparametrization:
    def test_delay_equals_time_rescaling_at_visits(self):
        rng = np.random.Generator(np.random.Philox(key=10))
        t = np.asarray(SCHED.times)
        for _ in range(20):
            d = rng.uniform(-3.0, 5.0, 5)
            factors = (t[1:] - d) / t[1:]
            pd_ = ParameterVector(alpha=ALPHA, beta=d)
            pt = ParameterVector(alpha=ALPHA, beta=factors)
            sd = spec_of("delay_general", interpolation_kind="natural_cubic")
            st_ = spec_of("time_pmrm", interpolation_kind="natural_cubic")
            for j in range(6):
                a = mean_value(sd, pd_, "active", None, j, t[j])
                b = mean_value(st_, pt, "active", None, j, t[j])
                assert a == pytest.approx(b, rel=1e-12)


class TestDesignVector:
    def test_time_pmrm_placebo_selector(self):
        spec = spec_of("time_pmrm")
        for j in range(6):
            row = design_vector(spec, "placebo", None, j)
            assert row.tolist() == [1.0, 0, 0, 0, 0, 0]

    def test_time_pmrm_active_selects_visit_slot(self):
        spec = spec_of("time_pmrm")
        assert design_vector(spec, "active", None, 3).tolist() == [0, 0, 0, 1.0, 0, 0]
        assert design_vector(spec, "active", None, 0).tolist() == [1.0, 0, 0, 0, 0, 0]

    def test_delay_two_param_blocks(self):
        spec = spec_of("delay_two_param", delay_plateau_visit=3)
        assert design_vector(spec, "active", None, 2).tolist() == [1.0, 0.0]
        assert design_vector(spec, "active", None, 3).tolist() == [0.0, 1.0]
        assert design_vector(spec, "active", None, 5).tolist() == [0.0, 1.0]
        assert design_vector(spec, "placebo", None, 2).tolist() == [0.0, 0.0]

    def test_delay_general_baseline_is_all_zero(self):
        spec = spec_of("delay_general")
        assert design_vector(spec, "active", None, 0).tolist() == [0.0] * 5
        assert design_vector(spec, "active", None, 2).tolist() == [0, 1.0, 0, 0, 0]

    def test_proportional_selectors(self):
        spec = spec_of("prop_slowing")
        assert design_vector(spec, "placebo", None, 4).tolist() == [1.0, 0.0]
        assert design_vector(spec, "active", None, 4).tolist() == [0.0, 1.0]

    def test_clda_full_design_row(self):
        spec = spec_of("clda")
        row = design_vector(spec, "active", None, 2)
        expected = np.zeros(11)
        expected[5 + 2] = 1.0
        assert row.tolist() == expected.tolist()
        assert design_vector(spec, "placebo", None, 0).tolist()[0] == 1.0


class TestInitialParameters:
    def test_no_effect_starting_values(self):
        data = generate_cs1_trial(Cs1Scenario(effect="none", n_per_arm=50), seed=3)
        assert initial_parameters(spec_of("time_pmrm"), data).beta.tolist() == [1.0] * 5
        assert initial_parameters(spec_of("delay_constant"), data).beta.tolist() == [0.0]
        sub = initial_parameters(spec_of("prop_slowing_subgroup"), data)
        assert sub.rho == 0.0

    def test_large_n_alpha_near_generating_means(self):
        data = generate_cs1_trial(Cs1Scenario(effect="none", n_per_arm=4000), seed=4)
        p = initial_parameters(spec_of("time_pmrm"), data)
        sds = np.sqrt(np.diag(np.asarray(Cs1Scenario(effect="none", n_per_arm=1).covariance)))
        # baseline pools both arms
        tol = 3.5 * sds / np.sqrt(4000)
        tol[0] /= np.sqrt(2.0)
        assert np.all(np.abs(p.alpha - CS1_PLACEBO_MEANS) < 3.5 * tol)

    def test_missing_placebo_visit_errors_with_visit_number(self):
        data = generate_cs1_trial(Cs1Scenario(effect="none", n_per_arm=5), seed=5)
        trimmed = []
        for s in data.subjects:
            obs = s.observations
            if s.arm == "placebo":
                obs = tuple(o for o in obs if o[0] != 3)
            trimmed.append(type(s)(s.subject_id, s.arm, s.group, obs))
        ds = type(data)(data.schedule, tuple(trimmed))
        with pytest.raises(InitializationError, match="visit 3"):
            initial_parameters(spec_of("time_pmrm"), ds)


class TestFlattenAndTables:
    @pytest.mark.parametrize(
        "variant,kw,n_extra",
        [
            ("clda", {}, 5),
            ("prop_decline", {}, 1),
            ("time_pmrm", {}, 5),
            ("prop_slowing", {}, 1),
            ("delay_general", {}, 5),
            ("delay_constant", {}, 1),
            ("delay_two_param", {"delay_plateau_visit": 2}, 2),
            ("prop_slowing_subgroup", {}, 2),
        ],
    )
    def test_flatten_round_trip(self, variant, kw, n_extra):
        spec = spec_of(variant, **kw) if variant != "clda" else spec_of("clda")
        names = param_names(spec)
        assert len(names) == 6 + n_extra
        rng = np.random.Generator(np.random.Philox(key=2))
        vec = rng.normal(size=len(names))
        back = flatten(spec, unflatten(spec, vec))
        np.testing.assert_allclose(back, vec, rtol=0, atol=0)

    def test_predicted_means_matches_scalar_path(self):
        data = generate_cs1_trial(Cs1Scenario(effect="slowed_20", n_per_arm=8), seed=6)
        packed = pack_dataset(data)
        spec = spec_of("time_pmrm", interpolation_kind="natural_cubic")
        rng = np.random.Generator(np.random.Philox(key=7))
        p = ParameterVector(alpha=ALPHA + rng.normal(0, 0.5, 6), beta=rng.uniform(0.5, 1.4, 5))
        mu = predicted_means(spec, p, packed)
        for sid, (lo, hi) in zip(packed.subject_ids, packed.subject_slices):
            subj = next(s for s in data.subjects if s.subject_id == sid)
            for pos in range(lo, hi):
                j = int(packed.visit_idx[pos])
                t = float(packed.times[pos])
                want = mean_value(spec, p, subj.arm, subj.group, j, t)
                assert mu[pos] == pytest.approx(want, rel=1e-12)

    def test_mean_table_placebo_row_is_alpha(self):
        spec = spec_of("time_pmrm", interpolation_kind="natural_cubic")
        p = ParameterVector(alpha=ALPHA, beta=np.array([0.9, 0.8, 0.7, 0.9, 1.1]))
        table = mean_table(spec, p)
        np.testing.assert_allclose(table[0], ALPHA, rtol=1e-14)
        np.testing.assert_allclose(table[1], ALPHA, rtol=1e-14)
