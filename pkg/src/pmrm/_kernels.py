"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

The likelihood of a fitted model is evaluated tens of thousands of times per
optimizer run, and Monte-Carlo studies run thousands of such fits, so the two
inner loops (spline evaluation and the blocked Gaussian log-likelihood) are
compiled with numba by default.  Setting the environment variable
``PMRM_NO_NUMBA=1`` selects vectorized pure-numpy fallbacks instead; the
fallbacks are also used automatically when numba is not importable.
``benchmarks/bench_kernels.py`` times the two paths against each other.

Both paths are exercised by the test suite and must agree to rounding.
"""

from __future__ import annotations

import os

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))

# interpolation kind codes shared with pmrm.interpolation
KIND_ZERO_ORDER = 0
KIND_LINEAR = 1
KIND_NATURAL_CUBIC = 2


def _numba_requested() -> bool:
    return os.environ.get("PMRM_NO_NUMBA", "").strip() in ("", "0")


NUMBA_ENABLED = False
if _numba_requested():
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False


def cubic_second_derivs_impl(knots, values):
    """Second derivatives of the natural cubic spline through (knots, values).

    Solves the standard tridiagonal system with the Thomas algorithm; the
    system is diagonally dominant so no pivoting is needed.  The boundary
    second derivatives are zero by the natural end conditions.
    """
    n = knots.shape[0]
    m2 = np.zeros(n)
    if n <= 2:
        return m2
    nin = n - 2
    sub = np.empty(nin)
    diag = np.empty(nin)
    sup = np.empty(nin)
    rhs = np.empty(nin)
    for r in range(1, n - 1):
        h0 = knots[r] - knots[r - 1]
        h1 = knots[r + 1] - knots[r]
        e = r - 1
        sub[e] = h0 / 6.0
        diag[e] = (h0 + h1) / 3.0
        sup[e] = h1 / 6.0
        rhs[e] = (values[r + 1] - values[r]) / h1 - (values[r] - values[r - 1]) / h0
    for e in range(1, nin):
        w = sub[e] / diag[e - 1]
        diag[e] -= w * sup[e - 1]
        rhs[e] -= w * rhs[e - 1]
    m2[nin] = rhs[nin - 1] / diag[nin - 1]
    for e in range(nin - 2, -1, -1):
        m2[e + 1] = (rhs[e] - sup[e] * m2[e + 2]) / diag[e]
    return m2


def _interp_eval_loop(kind, knots, values, m2, ts):
    n = knots.shape[0]
    out = np.empty(ts.shape[0])
    last = n - 1
    for q in range(ts.shape[0]):
        t = ts[q]
        if kind == 0:
            # piecewise constant, left-closed segments, constant beyond the span
            if t <= knots[0]:
                out[q] = values[0]
            elif t >= knots[last]:
                out[q] = values[last]
            else:
                lo = 0
                hi = last
                while hi - lo > 1:
                    mid = (lo + hi) // 2
                    if t >= knots[mid]:
                        lo = mid
                    else:
                        hi = mid
                out[q] = values[lo]
            continue
        if kind == 2 and t > knots[last]:
            h = knots[last] - knots[last - 1]
            slope = (values[last] - values[last - 1]) / h + h * m2[last - 1] / 6.0
            out[q] = values[last] + slope * (t - knots[last])
            continue
        if kind == 2 and t < knots[0]:
            h = knots[1] - knots[0]
            slope = (values[1] - values[0]) / h - h * m2[1] / 6.0
            out[q] = values[0] + slope * (t - knots[0])
            continue
        # locate segment; clamping extends the end segments linearly
        lo = 0
        hi = last
        if t >= knots[last]:
            lo = last - 1
        elif t > knots[0]:
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if t >= knots[mid]:
                    lo = mid
                else:
                    hi = mid
        h = knots[lo + 1] - knots[lo]
        if kind == 1:
            out[q] = values[lo] + (values[lo + 1] - values[lo]) * (t - knots[lo]) / h
        else:
            a = (knots[lo + 1] - t) / h
            b = (t - knots[lo]) / h
            out[q] = (
                a * values[lo]
                + b * values[lo + 1]
                + ((a * a * a - a) * m2[lo] + (b * b * b - b) * m2[lo + 1]) * h * h / 6.0
            )
    return out


def _interp_eval_numpy(kind, knots, values, m2, ts):
    n = knots.shape[0]
    last = n - 1
    if kind == 0:
        seg = np.searchsorted(knots, ts, side="right") - 1
        seg = np.clip(seg, 0, last)
        return values[seg]
    seg = np.clip(np.searchsorted(knots, ts, side="right") - 1, 0, last - 1)
    h = knots[seg + 1] - knots[seg]
    if kind == 1:
        return values[seg] + (values[seg + 1] - values[seg]) * (ts - knots[seg]) / h
    a = (knots[seg + 1] - ts) / h
    b = (ts - knots[seg]) / h
    out = (
        a * values[seg]
        + b * values[seg + 1]
        + ((a**3 - a) * m2[seg] + (b**3 - b) * m2[seg + 1]) * h * h / 6.0
    )
    hi = knots[last] - knots[last - 1]
    slope_hi = (values[last] - values[last - 1]) / hi + hi * m2[last - 1] / 6.0
    above = ts > knots[last]
    if np.any(above):
        out = np.where(above, values[last] + slope_hi * (ts - knots[last]), out)
    h0 = knots[1] - knots[0]
    slope_lo = (values[1] - values[0]) / h0 - h0 * m2[1] / 6.0
    below = ts < knots[0]
    if np.any(below):
        out = np.where(below, values[0] + slope_lo * (ts - knots[0]), out)
    return out


def _gaussian_loglik_loop(y, mu, pat_off_obs, pat_counts, pat_cols, pat_col_off, cov):
    """Sum of Gaussian log-densities over subjects grouped by missingness pattern.

    Subjects sharing an observation pattern are stored contiguously in ``y``
    and ``mu`` so the Cholesky factor of the pattern submatrix is computed
    once per pattern.  Returns nan when the submatrix is not positive
    definite or any term is non-finite.
    """
    total = 0.0
    n_pat = pat_counts.shape[0]
    dmax = cov.shape[0]
    chol = np.empty((dmax, dmax))
    w = np.empty(dmax)
    for p in range(n_pat):
        c0 = pat_col_off[p]
        k = pat_col_off[p + 1] - c0
        for i in range(k):
            ci = pat_cols[c0 + i]
            for j in range(i + 1):
                cj = pat_cols[c0 + j]
                acc = cov[ci, cj]
                for t in range(j):
                    acc -= chol[i, t] * chol[j, t]
                if i == j:
                    if not acc > 0.0:
                        return np.nan
                    chol[i, i] = np.sqrt(acc)
                else:
                    chol[i, j] = acc / chol[j, j]
        logdet = 0.0
        for i in range(k):
            logdet += np.log(chol[i, i])
        logdet *= 2.0
        n_p = pat_counts[p]
        base = pat_off_obs[p]
        quad = 0.0
        for s in range(n_p):
            o = base + s * k
            for i in range(k):
                acc = y[o + i] - mu[o + i]
                for j in range(i):
                    acc -= chol[i, j] * w[j]
                w[i] = acc / chol[i, i]
                quad += w[i] * w[i]
        total += -0.5 * (n_p * (k * LOG_2PI + logdet) + quad)
    if not np.isfinite(total):
        return np.nan
    return total


def _gaussian_loglik_numpy(y, mu, pat_off_obs, pat_counts, pat_cols, pat_col_off, cov):
    if not np.all(np.isfinite(cov)):
        return np.nan
    total = 0.0
    for p in range(pat_counts.shape[0]):
        cols = pat_cols[pat_col_off[p] : pat_col_off[p + 1]]
        k = cols.shape[0]
        n_p = int(pat_counts[p])
        block = slice(pat_off_obs[p], pat_off_obs[p] + n_p * k)
        try:
            chol = np.linalg.cholesky(cov[np.ix_(cols, cols)])
        except np.linalg.LinAlgError:
            return np.nan
        resid = (y[block] - mu[block]).reshape(n_p, k)
        w = np.linalg.solve(chol, resid.T)
        quad = float(np.sum(w * w))
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        total += -0.5 * (n_p * (k * LOG_2PI + logdet) + quad)
    if not np.isfinite(total):
        return np.nan
    return total


if NUMBA_ENABLED:
    cubic_second_derivs = njit(cache=True)(cubic_second_derivs_impl)
    interp_eval = njit(cache=True)(_interp_eval_loop)
    gaussian_loglik = njit(cache=True)(_gaussian_loglik_loop)
else:
    cubic_second_derivs = cubic_second_derivs_impl
    interp_eval = _interp_eval_numpy
    gaussian_loglik = _gaussian_loglik_numpy

# both paths kept importable for tests and benchmarks
interp_eval_numpy = _interp_eval_numpy
interp_eval_loop = _interp_eval_loop
gaussian_loglik_numpy = _gaussian_loglik_numpy
gaussian_loglik_loop = _gaussian_loglik_loop


def warmup():
    """Trigger JIT compilation of the active kernels on tiny inputs.

    Called once before worker pools fork so children inherit compiled code.
    """
    knots = np.array([0.0, 1.0, 2.0])
    values = np.array([0.0, 1.0, 0.0])
    m2 = cubic_second_derivs(knots, values)
    for kind in (KIND_ZERO_ORDER, KIND_LINEAR, KIND_NATURAL_CUBIC):
        interp_eval(kind, knots, values, m2, np.array([0.5, 2.5]))
    y = np.array([0.1, -0.2, 0.3])
    gaussian_loglik(
        y,
        np.zeros(3),
        np.array([0, 2], dtype=np.int64),
        np.array([1, 1], dtype=np.int64),
        np.array([0, 1, 1], dtype=np.int64),
        np.array([0, 2, 3], dtype=np.int64),
        np.eye(2),
    )
