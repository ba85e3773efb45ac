"""Monte-Carlo study driver: replicated trials through six analysis methods,
empirical significance-cutoff recalibration, and report emission.

Replications parallelize over a process pool with per-replication seeds
``base_seed + index``; aggregation uses sums and sorted quantiles only, so
summaries are identical for any worker count.  Replications with a
non-converged fit are excluded and counted.
"""

from __future__ import annotations

import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from . import __version__, _kernels
from .errors import ContractError, FitError, PmrmError, ValidationError
from .estimation import FitOptions, fit_model
from .inference import (
    auc_contrast,
    lrt_proportional_slowing,
    trapezoid_weights,
    type3_treatment_test,
    wald_test,
)
from .interpolation import build_interpolant
from .models import MeanModelSpec
from .simulation import (
    RNG_ID,
    Cs1Scenario,
    PoolScenario,
    cs1_active_means,
    generate_cs1_trial,
    generate_pool_trial,
    synthetic_pool,
)

METHODS = (
    "clda_final_visit",
    "clda_auc",
    "clda_type3",
    "pmrm_prop_decline",
    "time_pmrm_final",
    "time_pmrm_prop_slowing",
)

_METHOD_MODEL = {
    "clda_final_visit": "clda",
    "clda_auc": "clda",
    "clda_type3": "clda",
    "pmrm_prop_decline": "prop_decline",
    "time_pmrm_final": "time_pmrm",
    "time_pmrm_prop_slowing": "prop_slowing",
}

LRT_KEY = "lrt_prop_slowing"


@dataclass(frozen=True)
class StudyConfig:
    scenario: Union[Cs1Scenario, PoolScenario]
    methods: tuple
    n_replications: int
    base_seed: int
    alpha_one_sided: float = 0.025
    alpha_two_sided: float = 0.05
    recalibration: Optional[dict] = None  # method -> p-value cutoff
    workers: int = 1
    include_lrt: bool = False
    interpolation_kind: str = "natural_cubic"
    fit_options: FitOptions = field(default_factory=FitOptions)
    higher_is_better: bool = False

    def __post_init__(self):
        if self.n_replications < 1:
            raise ValidationError("n_replications must be at least 1")
        for a in (self.alpha_one_sided, self.alpha_two_sided):
            if not 0.0 < a < 1.0:
                raise ValidationError("significance levels must lie in (0, 1)")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValidationError(f"unknown methods: {sorted(unknown)}")
        object.__setattr__(self, "methods", tuple(self.methods))


@dataclass
class StudyReport:
    """Aggregated Monte-Carlo results plus the per-replication dump."""

    scenario_label: str
    scenario_meta: dict
    methods: tuple
    n_replications: int
    base_seed: int
    alpha_one_sided: float
    alpha_two_sided: float
    cutoffs: Optional[dict]
    workers: int
    include_lrt: bool
    p_one: dict
    p_two: dict
    estimates: dict
    ses: dict
    ci_low: dict
    ci_high: dict
    logliks: dict
    lrt_p: Optional[np.ndarray]
    included_indices: np.ndarray
    excluded_indices: tuple
    exclusion_reasons: tuple
    runtime_seconds: float
    rng_id: str = RNG_ID

    @property
    def n_excluded(self) -> int:
        return len(self.excluded_indices)

    def pvalues_used(self, method: str) -> np.ndarray:
        """The p-value stream a method is judged on (two-sided for the
        all-visits test, one-sided otherwise)."""
        if method == LRT_KEY:
            if self.lrt_p is None:
                raise ContractError("study did not record the likelihood-ratio test")
            return self.lrt_p
        if method not in self.methods:
            raise ContractError(f"method {method!r} not in study")
        return self.p_two[method] if method == "clda_type3" else self.p_one[method]

    def nominal_cutoff(self, method: str) -> float:
        if method == "clda_type3":
            return self.alpha_two_sided
        if method == LRT_KEY:
            return self.alpha_two_sided
        return self.alpha_one_sided

    def cutoff_used(self, method: str) -> float:
        if self.cutoffs and method in self.cutoffs:
            return float(self.cutoffs[method])
        return self.nominal_cutoff(method)

    def rejection_rate(self, method: str) -> float:
        p = self.pvalues_used(method)
        if p.size == 0:
            return float("nan")
        return float(np.mean(p <= self.cutoff_used(method)))

    def method_summary(self, method: str) -> dict:
        est = self.estimates.get(method)
        have_est = est is not None and not np.all(np.isnan(est))
        ses = self.ses.get(method)
        return {
            "method": method,
            "n_used": int(self.included_indices.size),
            "excluded": self.n_excluded,
            "rejection_rate": self.rejection_rate(method),
            "cutoff": self.cutoff_used(method),
            "mean_estimate": float(np.mean(est)) if have_est else float("nan"),
            "median_estimate": float(np.median(est)) if have_est else float("nan"),
            "sd_estimate": float(np.std(est, ddof=1)) if have_est else float("nan"),
            "mean_se": float(np.mean(ses)) if have_est else float("nan"),
        }


def _model_spec(model: str, schedule, interpolation_kind: str) -> MeanModelSpec:
    if model == "clda":
        return MeanModelSpec(variant="clda", schedule=schedule)
    return MeanModelSpec(
        variant=model, schedule=schedule, interpolation_kind=interpolation_kind
    )


def _needed_models(config: StudyConfig) -> tuple:
    wanted = {_METHOD_MODEL[m] for m in config.methods}
    if config.include_lrt:
        wanted.update(("time_pmrm", "prop_slowing"))
    order = ("clda", "prop_decline", "time_pmrm", "prop_slowing")
    return tuple(m for m in order if m in wanted)


_EMPTY = {
    "p_one": float("nan"),
    "p_two": float("nan"),
    "estimate": float("nan"),
    "se": float("nan"),
    "ci_low": float("nan"),
    "ci_high": float("nan"),
}


def _test_to_dict(res) -> dict:
    return {
        "p_one": res.p_one_sided if res.p_one_sided is not None else float("nan"),
        "p_two": res.p_two_sided,
        "estimate": res.estimate if res.estimate is not None else float("nan"),
        "se": res.se if res.se is not None else float("nan"),
        "ci_low": res.ci_low if res.ci_low is not None else float("nan"),
        "ci_high": res.ci_high if res.ci_high is not None else float("nan"),
    }


def _replicate(config: StudyConfig, index: int) -> dict:
    seed = config.base_seed + index
    scenario = config.scenario
    if isinstance(scenario, Cs1Scenario):
        data = generate_cs1_trial(scenario, seed)
    else:
        data = generate_pool_trial(scenario, seed)
    rec = {"index": index, "excluded": False, "reason": None, "methods": {},
           "logliks": {}, "lrt_p": float("nan")}
    opts = replace(config.fit_options, seed=seed)
    fits = {}
    try:
        for model in _needed_models(config):
            spec = _model_spec(model, data.schedule, config.interpolation_kind)
            fit = fit_model(spec, data, opts)
            if not fit.converged:
                rec["excluded"] = True
                rec["reason"] = f"{model} fit did not converge"
                return rec
            fits[model] = fit
            rec["logliks"][model] = fit.loglik
        hib = config.higher_is_better
        for method in config.methods:
            fit = fits[_METHOD_MODEL[method]]
            if method == "clda_final_visit":
                res = wald_test(fit, "clda_final_contrast", higher_is_better=hib)
            elif method == "clda_auc":
                res = auc_contrast(fit)
            elif method == "clda_type3":
                res = type3_treatment_test(fit)
            elif method == "pmrm_prop_decline":
                res = wald_test(fit, "beta", higher_is_better=hib)
            elif method == "time_pmrm_final":
                res = wald_test(fit, "beta_final", higher_is_better=hib)
            else:
                res = wald_test(fit, "beta", higher_is_better=hib)
            rec["methods"][method] = _test_to_dict(res)
        if config.include_lrt:
            lrt = lrt_proportional_slowing(fits["prop_slowing"], fits["time_pmrm"])
            rec["lrt_p"] = lrt.p_two_sided
    except PmrmError as exc:
        rec["excluded"] = True
        rec["reason"] = str(exc)
    return rec


_WORKER_CONFIG: Optional[StudyConfig] = None


def _init_worker(config: StudyConfig) -> None:
    global _WORKER_CONFIG
    _WORKER_CONFIG = config


def _worker_replicate(index: int) -> dict:
    return _replicate(_WORKER_CONFIG, index)


def scenario_metadata(scenario) -> dict:
    if isinstance(scenario, Cs1Scenario):
        return {
            "family": "cs1",
            "effect": scenario.effect,
            "n_per_arm": scenario.n_per_arm,
            "schedule": list(scenario.schedule.times),
        }
    return {
        "family": "pool",
        "effect": scenario.effect,
        "implementation": scenario.implementation,
        "n_per_arm": scenario.n_per_arm,
        "pool_subjects": scenario.pool.n_subjects,
        "schedule": list(scenario.schedule.times),
        "deltas": [float(d) for d in scenario.deltas],
        "scale_baseline": scenario.scale_baseline,
    }


def run_study(config: StudyConfig) -> StudyReport:
    """Run every replication, fit the needed models once each, aggregate.

    The categorical fit is shared by its three quantifications; the two
    time-rescaling fits are shared with the likelihood-ratio diagnostic.
    """
    t0 = time.monotonic()
    _kernels.warmup()  # compile before forking so workers inherit machine code
    n = config.n_replications
    if config.workers > 1:
        with ProcessPoolExecutor(
            max_workers=config.workers,
            initializer=_init_worker,
            initargs=(config,),
        ) as pool:
            chunk = max(1, n // (config.workers * 8))
            records = list(pool.map(_worker_replicate, range(n), chunksize=chunk))
    else:
        records = [_replicate(config, i) for i in range(n)]
    records.sort(key=lambda r: r["index"])
    included = [r for r in records if not r["excluded"]]
    excluded = [r for r in records if r["excluded"]]
    if not included:
        raise FitError(
            "every replication failed; first reason: " + str(excluded[0]["reason"])
        )
    p_one, p_two, est, ses, clo, chi = {}, {}, {}, {}, {}, {}
    for method in config.methods:
        p_one[method] = np.array([r["methods"][method]["p_one"] for r in included])
        p_two[method] = np.array([r["methods"][method]["p_two"] for r in included])
        est[method] = np.array([r["methods"][method]["estimate"] for r in included])
        ses[method] = np.array([r["methods"][method]["se"] for r in included])
        clo[method] = np.array([r["methods"][method]["ci_low"] for r in included])
        chi[method] = np.array([r["methods"][method]["ci_high"] for r in included])
    logliks = {
        model: np.array([r["logliks"][model] for r in included])
        for model in _needed_models(config)
    }
    lrt_p = (
        np.array([r["lrt_p"] for r in included]) if config.include_lrt else None
    )
    return StudyReport(
        scenario_label=_scenario_label(config.scenario),
        scenario_meta=scenario_metadata(config.scenario),
        methods=config.methods,
        n_replications=n,
        base_seed=config.base_seed,
        alpha_one_sided=config.alpha_one_sided,
        alpha_two_sided=config.alpha_two_sided,
        cutoffs=dict(config.recalibration) if config.recalibration else None,
        workers=config.workers,
        include_lrt=config.include_lrt,
        p_one=p_one,
        p_two=p_two,
        estimates=est,
        ses=ses,
        ci_low=clo,
        ci_high=chi,
        logliks=logliks,
        lrt_p=lrt_p,
        included_indices=np.array([r["index"] for r in included], dtype=np.int64),
        excluded_indices=tuple(r["index"] for r in excluded),
        exclusion_reasons=tuple(str(r["reason"]) for r in excluded),
        runtime_seconds=time.monotonic() - t0,
    )


def _scenario_label(scenario) -> str:
    meta = scenario_metadata(scenario)
    parts = [meta["family"], meta["effect"], f"{meta['n_per_arm']}per_arm"]
    if meta["family"] == "pool" and meta["effect"] != "none":
        parts.insert(2, meta["implementation"])
    return "_".join(parts)


def recalibrate_cutoffs(
    null_report: StudyReport,
    alpha_one: Optional[float] = None,
    alpha_two: Optional[float] = None,
    include_lrt: bool = False,
) -> dict:
    """Empirical p-value cutoffs from a null run: the alpha-quantile of each
    method's null p-values (type-7 linear interpolation).

    Applying the cutoffs to the generating null report reproduces a rejection
    rate of alpha up to quantile-tie handling.
    """
    alpha_one = null_report.alpha_one_sided if alpha_one is None else alpha_one
    alpha_two = null_report.alpha_two_sided if alpha_two is None else alpha_two
    methods = list(null_report.methods)
    if include_lrt and null_report.lrt_p is not None:
        methods.append(LRT_KEY)
    cutoffs = {}
    for method in methods:
        alpha = alpha_two if method in ("clda_type3", LRT_KEY) else alpha_one
        p = null_report.pvalues_used(method)
        if p.size < 1.0 / alpha:
            warnings.warn(
                f"{method}: only {p.size} null replications for the "
                f"{alpha} quantile; cutoff is unstable",
                stacklevel=2,
            )
        cutoffs[method] = float(np.quantile(p, alpha))
    return cutoffs


def coverage_summary(report: StudyReport, true_effect: float, method: str) -> float:
    """Fraction of replications whose 95% interval contains the true effect."""
    if method == "clda_type3":
        raise ContractError("the all-visits test produces no confidence interval")
    if method not in report.methods:
        raise ContractError(f"method {method!r} not in study")
    lo = report.ci_low[method]
    hi = report.ci_high[method]
    if np.all(np.isnan(lo)):
        raise ContractError(f"method {method!r} recorded no confidence intervals")
    return float(np.mean((lo <= true_effect) & (true_effect <= hi)))


# scenario/method pairs with a defined true effect under the method's model
_ALL_CS1 = set(
    (
        "none",
        "stable_symptomatic",
        "fading_symptomatic",
        "reduced_decline_20",
        "stable_delay_4m",
        "slowed_20",
        "increasing_slowing",
    )
)
_TRUTH_VALID = {
    "clda_final_visit": _ALL_CS1,
    "clda_auc": _ALL_CS1,
    "clda_type3": set(),
    "pmrm_prop_decline": {"none", "reduced_decline_20"},
    "time_pmrm_final": _ALL_CS1,
    "time_pmrm_prop_slowing": {"none", "slowed_20"},
}


def derive_true_time_effect(
    scenario: Cs1Scenario, method: str, interpolation_kind: str = "natural_cubic"
) -> Optional[float]:
    """True effect under a method's quantification, or None when misspecified.

    For time-based methods this minimizes the least-squares distance between
    the scenario's active mean vector and the placebo-curve model over the
    effect parameter (grid search plus local refinement).
    """
    if method not in _TRUTH_VALID:
        raise ContractError(f"unknown method {method!r}")
    if scenario.effect not in _TRUTH_VALID[method]:
        return None
    placebo = np.asarray(scenario.mean_placebo, dtype=float)
    active = scenario.active_means()
    t = scenario.schedule.as_array()
    m = scenario.schedule.m
    if method == "clda_final_visit":
        return float(active[m] - placebo[m])
    if method == "clda_auc":
        w = trapezoid_weights(scenario.schedule)
        return float(w @ (active - placebo))
    if scenario.effect == "none":
        return 1.0
    curve = build_interpolant(interpolation_kind, t, placebo)
    if method == "pmrm_prop_decline":
        def loss(b):
            pred = b * (curve(t) - placebo[0]) + placebo[0]
            return float(np.sum((active - pred) ** 2))
    elif method == "time_pmrm_final":
        def loss(b):
            return float((active[m] - curve(b * t[m])) ** 2)
    else:  # time_pmrm_prop_slowing
        def loss(b):
            return float(np.sum((active - curve(b * t)) ** 2))
    grid = np.arange(0.0, 2.0, 0.002)
    losses = [loss(b) for b in grid]
    best = grid[int(np.argmin(losses))]
    from scipy.optimize import minimize_scalar

    res = minimize_scalar(
        loss, bounds=(best - 0.01, best + 0.01), method="bounded",
        options={"xatol": 1e-10},
    )
    return float(res.x)


# ---------------------------------------------------------------------------
# report emission and reload

SUMMARY_COLUMNS = (
    "method",
    "scenario",
    "n_replications",
    "n_used",
    "excluded",
    "rejection_rate",
    "cutoff",
    "mean_estimate",
    "median_estimate",
    "sd_estimate",
    "mean_se",
)


def _fmt(x) -> str:
    if isinstance(x, float):
        return "%.10g" % x
    return str(x)


def summary_rows(report: StudyReport) -> list:
    rows = []
    for method in report.methods:
        s = report.method_summary(method)
        rows.append(
            [
                method,
                report.scenario_label,
                report.n_replications,
                s["n_used"],
                s["excluded"],
                s["rejection_rate"],
                s["cutoff"],
                s["mean_estimate"],
                s["median_estimate"],
                s["sd_estimate"],
                s["mean_se"],
            ]
        )
    if report.lrt_p is not None:
        rate = float(np.mean(report.lrt_p <= report.cutoff_used(LRT_KEY)))
        rows.append(
            [
                LRT_KEY,
                report.scenario_label,
                report.n_replications,
                int(report.included_indices.size),
                report.n_excluded,
                rate,
                report.cutoff_used(LRT_KEY),
                float("nan"),
                float("nan"),
                float("nan"),
                float("nan"),
            ]
        )
    return rows


def emit_report(report: StudyReport, out_dir, plots: bool = False) -> list:
    """Write summary CSV, per-replication dump, and metadata; return paths.

    The summary CSV is byte-stable for a fixed configuration (runtimes live
    in the metadata document only).
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for row in summary_rows(report):
            fh.write(",".join(_fmt(x) for x in row) + "\n")
    paths.append(summary_path)

    dump_path = os.path.join(out_dir, "replications.csv")
    with open(dump_path, "w", encoding="utf-8") as fh:
        fh.write("replication,method,p_one,p_two,estimate,se,ci_low,ci_high\n")
        for pos, idx in enumerate(report.included_indices):
            for method in report.methods:
                fields = [
                    str(int(idx)),
                    method,
                    _fmt(float(report.p_one[method][pos])),
                    _fmt(float(report.p_two[method][pos])),
                    _fmt(float(report.estimates[method][pos])),
                    _fmt(float(report.ses[method][pos])),
                    _fmt(float(report.ci_low[method][pos])),
                    _fmt(float(report.ci_high[method][pos])),
                ]
                fh.write(",".join(fields) + "\n")
            if report.lrt_p is not None:
                fh.write(
                    f"{int(idx)},{LRT_KEY},nan,{_fmt(float(report.lrt_p[pos]))},"
                    "nan,nan,nan,nan\n"
                )
    paths.append(dump_path)

    meta = {
        "scenario": report.scenario_meta,
        "scenario_label": report.scenario_label,
        "methods": list(report.methods),
        "n_replications": report.n_replications,
        "base_seed": report.base_seed,
        "alpha_one_sided": report.alpha_one_sided,
        "alpha_two_sided": report.alpha_two_sided,
        "cutoffs": report.cutoffs,
        "workers": report.workers,
        "include_lrt": report.include_lrt,
        "excluded_indices": list(report.excluded_indices),
        "exclusion_reasons": list(report.exclusion_reasons),
        "rng": report.rng_id,
        "runtime_seconds": report.runtime_seconds,
        "package_version": __version__,
    }
    meta_path = os.path.join(out_dir, "metadata.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(meta_path)

    if plots:
        from .plotting import scenario_trajectory_svg

        svg_path = os.path.join(out_dir, "trajectories.svg")
        scenario_trajectory_svg(report.scenario_meta, svg_path)
        paths.append(svg_path)
    return paths


def load_report(report_dir) -> StudyReport:
    """Reconstruct a StudyReport from an emitted report directory."""
    with open(os.path.join(report_dir, "metadata.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    methods = tuple(meta["methods"])
    rows: dict = {}
    lrt_by_rep: dict = {}
    with open(os.path.join(report_dir, "replications.csv"), encoding="utf-8") as fh:
        header = fh.readline()
        for line in fh:
            parts = line.rstrip("\n").split(",")
            idx = int(parts[0])
            method = parts[1]
            vals = [float(v) for v in parts[2:]]
            if method == LRT_KEY:
                lrt_by_rep[idx] = vals[1]
            else:
                rows.setdefault(idx, {})[method] = vals
    indices = sorted(rows)
    p_one, p_two, est, ses, clo, chi = {}, {}, {}, {}, {}, {}
    for method in methods:
        p_one[method] = np.array([rows[i][method][0] for i in indices])
        p_two[method] = np.array([rows[i][method][1] for i in indices])
        est[method] = np.array([rows[i][method][2] for i in indices])
        ses[method] = np.array([rows[i][method][3] for i in indices])
        clo[method] = np.array([rows[i][method][4] for i in indices])
        chi[method] = np.array([rows[i][method][5] for i in indices])
    lrt_p = (
        np.array([lrt_by_rep[i] for i in indices]) if meta["include_lrt"] else None
    )
    return StudyReport(
        scenario_label=meta["scenario_label"],
        scenario_meta=meta["scenario"],
        methods=methods,
        n_replications=meta["n_replications"],
        base_seed=meta["base_seed"],
        alpha_one_sided=meta["alpha_one_sided"],
        alpha_two_sided=meta["alpha_two_sided"],
        cutoffs=meta["cutoffs"],
        workers=meta["workers"],
        include_lrt=meta["include_lrt"],
        p_one=p_one,
        p_two=p_two,
        estimates=est,
        ses=ses,
        ci_low=clo,
        ci_high=chi,
        logliks={},
        lrt_p=lrt_p,
        included_indices=np.array(indices, dtype=np.int64),
        excluded_indices=tuple(meta["excluded_indices"]),
        exclusion_reasons=tuple(meta["exclusion_reasons"]),
        runtime_seconds=meta["runtime_seconds"],
        rng_id=meta["rng"],
    )


def scenario_from_meta(meta: dict):
    """Rebuild a scenario object from report/config metadata."""
    if meta["family"] == "cs1":
        return Cs1Scenario(effect=meta["effect"], n_per_arm=meta["n_per_arm"])
    pool = synthetic_pool(
        n_subjects=meta.get("pool_subjects", 1024), seed=meta.get("pool_seed", 202406)
    )
    return PoolScenario(
        pool=pool,
        effect=meta["effect"],
        implementation=meta.get("implementation", "mean_level"),
        n_per_arm=meta["n_per_arm"],
        scale_baseline=meta.get("scale_baseline", True),
    )
