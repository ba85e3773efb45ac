"""Interpolant construction, evaluation, extrapolation, and invariants.

Hand-derived oracle values are frozen in the tests; the derivations are
noted inline so they can be re-checked on paper.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmrm import _kernels
from pmrm.errors import ValidationError
from pmrm.interpolation import build_interpolant, evaluate

# the six-visit placebo trajectory used across the suite
MONTHS = np.array([0.0, 6.0, 12.0, 18.0, 24.0, 36.0])
PLACEBO = np.array([19.6, 20.5, 20.9, 22.7, 23.8, 27.4])


class TestConstruction:
    def test_interior_second_derivative_matches_hand_solve(self):
        # knots (0,1,2), values (0,1,0): the 1x1 tridiagonal system is
        # (2/3) * M1 = (0-1)/1 - (1-0)/1 = -2, so M1 = -3
        s = build_interpolant("natural_cubic", [0, 1, 2], [0, 1, 0])
        assert s.second_derivatives == pytest.approx([0.0, -3.0, 0.0], abs=1e-14)

    def test_natural_boundary_second_derivatives_are_zero(self):
        s = build_interpolant("natural_cubic", MONTHS, PLACEBO)
        assert s.second_derivatives[0] == 0.0
        assert s.second_derivatives[-1] == 0.0

    @pytest.mark.parametrize("kind", ["zero_order", "linear", "natural_cubic"])
    def test_too_few_knots_rejected(self, kind):
        with pytest.raises(ValidationError):
            build_interpolant(kind, [0.0], [1.0])

    @pytest.mark.parametrize("knots", [[0, 0, 1], [0, 2, 1], [1, 1]])
    def test_non_increasing_knots_rejected(self, knots):
        with pytest.raises(ValidationError):
            build_interpolant("linear", knots, list(range(len(knots))))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            build_interpolant("linear", [0, 1, 2], [0, 1])


class TestEvaluation:
    @pytest.mark.parametrize("kind", ["zero_order", "linear", "natural_cubic"])
    def test_interpolation_condition_at_knots(self, kind):
        s = build_interpolant(kind, MONTHS, PLACEBO)
        for t, v in zip(MONTHS, PLACEBO):
            assert evaluate(s, t) == pytest.approx(v, rel=1e-12)

    def test_cubic_segment_value(self):
        # with M1 = -3 the first segment is s(t) = -0.5 t^3 + 1.5 t
        s = build_interpolant("natural_cubic", [0, 1, 2], [0, 1, 0])
        assert s(0.5) == pytest.approx(0.6875, abs=1e-14)

    def test_cubic_linear_extrapolation_beyond_last_knot(self):
        # boundary slope s'(2) = (0-1)/1 + (-3)/6 = -1.5, so s(3) = -1.5
        s = build_interpolant("natural_cubic", [0, 1, 2], [0, 1, 0])
        assert s(3.0) == pytest.approx(-1.5, abs=1e-12)

    def test_cubic_extrapolation_below_first_knot(self):
        # slope at 0 is (1-0)/1 - (-3)/6 = 1.5
        s = build_interpolant("natural_cubic", [0, 1, 2], [0, 1, 0])
        assert s(-1.0) == pytest.approx(-1.5, abs=1e-12)

    def test_placebo_curve_values(self):
        lin = build_interpolant("linear", MONTHS, PLACEBO)
        assert lin(14.0) == pytest.approx(21.5, abs=1e-12)
        # 23.8 + (4.8 / 12) * 3.6 = 25.24
        assert lin(28.8) == pytest.approx(25.24, abs=1e-12)

    def test_zero_order_segments_and_extension(self):
        z = build_interpolant("zero_order", [0, 1, 2], [5.0, 6.0, 7.0])
        assert z(0.0) == 5.0
        assert z(0.999) == 5.0
        assert z(1.0) == 6.0
        assert z(2.0) == 7.0
        assert z(10.0) == 7.0
        assert z(-3.0) == 5.0

    def test_linear_extension_uses_boundary_slope(self):
        lin = build_interpolant("linear", [0, 1, 2], [0.0, 1.0, 3.0])
        assert lin(3.0) == pytest.approx(5.0)
        assert lin(-1.0) == pytest.approx(-1.0)

    def test_array_evaluation_matches_scalar(self):
        s = build_interpolant("natural_cubic", MONTHS, PLACEBO)
        ts = np.linspace(-4.0, 42.0, 57)
        batch = s(ts)
        singles = np.array([s(float(t)) for t in ts])
        np.testing.assert_allclose(batch, singles, rtol=1e-14)


class TestInvariants:
    def test_cubic_continuity_at_interior_knots(self):
        # One-sided finite-difference stencils straddling each knot.  On a
        # piecewise cubic the quartic truncation terms vanish, so Richardson
        # extrapolation of the second-order stencils recovers the one-sided
        # limits exactly up to rounding; any surviving jump is a real
        # discontinuity.
        s = build_interpolant("natural_cubic", MONTHS, PLACEBO)

        def d1_onesided(k, h):
            return (-3 * s(k) + 4 * s(k + h) - s(k + 2 * h)) / (2 * h)

        def d2_onesided(k, h):
            return (2 * s(k) - 5 * s(k + h) + 4 * s(k + 2 * h) - s(k + 3 * h)) / h**2

        h = 0.01
        for knot in MONTHS[1:-1]:
            eps = 1e-4
            jump = 2 * (s(knot + eps / 2) - s(knot - eps / 2)) - (
                s(knot + eps) - s(knot - eps)
            )
            assert abs(jump) < 1e-10
            d1_right = (4 * d1_onesided(knot, h / 2) - d1_onesided(knot, h)) / 3
            d1_left = (4 * d1_onesided(knot, -h / 2) - d1_onesided(knot, -h)) / 3
            assert abs(d1_right - d1_left) < 1e-10
            assert abs(d2_onesided(knot, h) - d2_onesided(knot, -h)) < 1e-9

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.floats(-5, 5), min_size=6, max_size=6),
        st.lists(st.floats(-5, 5), min_size=6, max_size=6),
        st.floats(-3, 3),
        st.floats(-3, 3),
        st.floats(-10, 50),
    )
    def test_linearity_in_values(self, v, w, a, b, t):
        v, w = np.array(v), np.array(w)
        for kind in ("zero_order", "linear", "natural_cubic"):
            combo = build_interpolant(kind, MONTHS, a * v + b * w)(t)
            split = a * build_interpolant(kind, MONTHS, v)(t) + b * build_interpolant(
                kind, MONTHS, w
            )(t)
            assert combo == pytest.approx(split, abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 36.0))
    def test_linear_interpolation_stays_in_range_for_monotone_data(self, t):
        lin = build_interpolant("linear", MONTHS, PLACEBO)
        assert PLACEBO.min() - 1e-12 <= lin(t) <= PLACEBO.max() + 1e-12


class TestKernelPaths:
    """The numba path and the numpy fallback must agree."""

    @pytest.mark.parametrize("kind", [0, 1, 2])
    def test_paths_agree(self, kind):
        rng = np.random.Generator(np.random.Philox(key=5))
        knots = np.cumsum(rng.uniform(0.5, 3.0, 7))
        values = rng.normal(size=7)
        m2 = np.asarray(_kernels.cubic_second_derivs_impl(knots, values))
        if kind != 2:
            m2 = np.zeros_like(m2)
        ts = rng.uniform(knots[0] - 5, knots[-1] + 5, 300)
        a = np.asarray(_kernels.interp_eval_loop(kind, knots, values, m2, ts))
        b = np.asarray(_kernels.interp_eval_numpy(kind, knots, values, m2, ts))
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
