"""Interpolants used by all continuous-time mean structures.

Three kinds are supported: ``zero_order`` (piecewise constant, left-closed
segments), ``linear``, and ``natural_cubic`` (zero second derivative at the
boundary knots).  Outside the knot span, linear and natural cubic interpolants
are extended linearly with the boundary slope, while the zero-order kind is
extended as a constant; evaluation below time zero is permitted and uses the
same rule.  Interpolants are immutable and safe for concurrent evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ValidationError

KINDS = ("zero_order", "linear", "natural_cubic")
_KIND_CODES = {
    "zero_order": _kernels.KIND_ZERO_ORDER,
    "linear": _kernels.KIND_LINEAR,
    "natural_cubic": _kernels.KIND_NATURAL_CUBIC,
}


@dataclass(frozen=True)
class Interpolant:
    """Anchored interpolating function of one variable.

    ``second_derivatives`` holds the natural-spline second derivatives at the
    knots (all zero for the other kinds).  Arrays are treated as immutable.
    """

    kind: str
    knots: np.ndarray
    values: np.ndarray
    second_derivatives: np.ndarray = field(repr=False)

    def __call__(self, t):
        return evaluate(self, t)


def build_interpolant(kind: str, knots, values) -> Interpolant:
    """Construct an interpolant anchored at ``(knots, values)``.

    Requires at least two strictly increasing knots and one value per knot.
    For the natural cubic kind the second derivatives solve the standard
    tridiagonal natural-spline system.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown interpolation kind {kind!r}")
    knots = np.ascontiguousarray(knots, dtype=float)
    values = np.ascontiguousarray(values, dtype=float)
    if knots.ndim != 1 or knots.shape[0] < 2:
        raise ValidationError("interpolation requires at least 2 knots")
    if values.shape != knots.shape:
        raise ValidationError("knots and values must have equal length")
    if not np.all(np.diff(knots) > 0):
        raise ValidationError("knots must be strictly increasing")
    if kind == "natural_cubic":
        m2 = np.asarray(_kernels.cubic_second_derivs(knots, values))
    else:
        m2 = np.zeros_like(knots)
    return Interpolant(kind=kind, knots=knots, values=values, second_derivatives=m2)


def evaluate(interp: Interpolant, t):
    """Evaluate the interpolant at scalar or array ``t``."""
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = _kernels.interp_eval(
        _KIND_CODES[interp.kind],
        interp.knots,
        interp.values,
        interp.second_derivatives,
        np.ascontiguousarray(ts.ravel()),
    )
    out = np.asarray(out)
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(out[0])
    return out.reshape(ts.shape)
