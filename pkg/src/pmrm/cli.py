"""Command-line interface.

Subcommands: ``fit`` a model to a long CSV, ``simulate`` datasets from a
scenario config, ``power`` to run a Monte-Carlo study, ``calibrate`` to turn
a null run into empirical cutoffs, ``coverage`` to score intervals against a
true value, and ``report`` to re-emit outputs from a stored study.

Exit codes: 0 success, 2 validation/usage error, 3 convergence failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .data import VisitSchedule, load_long_csv, write_long_csv
from .errors import FitError, PmrmError
from .estimation import FitOptions, fit_model, standard_errors
from .harness import (
    METHODS,
    StudyConfig,
    coverage_summary,
    emit_report,
    load_report,
    recalibrate_cutoffs,
    run_study,
    scenario_from_meta,
)
from .models import MeanModelSpec, VARIANTS
from .simulation import (
    Cs1Scenario,
    PoolScenario,
    generate_cs1_trial,
    generate_pool_trial,
    synthetic_pool,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3


def _parse_schedule(text: str) -> VisitSchedule:
    return VisitSchedule(times=tuple(float(x) for x in text.split(",")))


def _load_config(path: str) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _scenario_from_config(cfg: dict):
    sc = cfg.get("scenario")
    if not sc:
        raise PmrmError("config needs a [scenario] section")
    family = sc.get("family")
    if family == "cs1":
        return Cs1Scenario(effect=sc["effect"], n_per_arm=int(sc["n_per_arm"]))
    if family == "pool":
        pool_cfg = sc.get("pool", {})
        pool = synthetic_pool(
            n_subjects=int(pool_cfg.get("size", 1024)),
            seed=int(pool_cfg.get("seed", 202406)),
        )
        return PoolScenario(
            pool=pool,
            effect=sc["effect"],
            implementation=sc.get("implementation", "mean_level"),
            n_per_arm=int(sc["n_per_arm"]),
            scale_baseline=bool(sc.get("scale_baseline", True)),
        )
    raise PmrmError(f"unknown scenario family {family!r}")


def _fit_options_from_config(cfg: dict) -> FitOptions:
    fc = cfg.get("fit", {})
    return FitOptions(
        max_iter=int(fc.get("max_iter", 500)),
        rel_tol=float(fc.get("rel_tol", 1e-9)),
        n_restarts=int(fc.get("n_restarts", 2)),
        gradient_tol=float(fc.get("gradient_tol", 1e-4)),
    )


def _study_config(cfg: dict, cutoffs=None) -> StudyConfig:
    st = cfg.get("study", {})
    return StudyConfig(
        scenario=_scenario_from_config(cfg),
        methods=tuple(st.get("methods", METHODS)),
        n_replications=int(st.get("n_replications", 500)),
        base_seed=int(st.get("base_seed", 0)),
        alpha_one_sided=float(st.get("alpha_one_sided", 0.025)),
        alpha_two_sided=float(st.get("alpha_two_sided", 0.05)),
        recalibration=cutoffs,
        workers=int(st.get("workers", 1)),
        include_lrt=bool(st.get("include_lrt", False)),
        interpolation_kind=st.get("interpolation", "natural_cubic"),
        fit_options=_fit_options_from_config(cfg),
        higher_is_better=bool(st.get("higher_is_better", False)),
    )


def _cmd_fit(args) -> int:
    schedule = _parse_schedule(args.schedule)
    dataset = load_long_csv(args.data, schedule, time_mode=args.time_mode)
    spec = MeanModelSpec(
        variant=args.model,
        schedule=schedule,
        interpolation_kind=None if args.model == "clda" else args.interpolation,
        improvement_visits=tuple(
            float(x) for x in args.improvement_visits.split(",")
        )
        if args.improvement_visits
        else (),
        delay_plateau_visit=args.plateau_visit,
    )
    fit = fit_model(spec, dataset, FitOptions(gradient_tol=args.gradient_tol))
    print(f"model: {args.model}")
    print(f"subjects: {fit.n_subjects}   observations: {fit.n_observations}")
    print(f"log-likelihood: {fit.loglik:.6f}")
    print(f"converged: {fit.converged}   iterations: {fit.iterations}")
    if fit.converged and fit.vcov_mean_params is not None:
        ses, _ = standard_errors(fit)
        print(f"{'parameter':<16}{'estimate':>14}{'se':>12}")
        for i, name in enumerate(fit.param_names):
            print(f"{name:<16}{fit.theta[i]:>14.6f}{ses[name]:>12.6f}")
    else:
        print(f"{'parameter':<16}{'estimate':>14}")
        for i, name in enumerate(fit.param_names):
            print(f"{name:<16}{fit.theta[i]:>14.6f}")
    if args.out:
        payload = {
            "model": args.model,
            "loglik": fit.loglik,
            "converged": fit.converged,
            "estimates": {n: float(fit.theta[i]) for i, n in enumerate(fit.param_names)},
            "covariance": [[float(v) for v in row] for row in fit.covariance],
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK if fit.converged else EXIT_CONVERGENCE


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    scenario = _scenario_from_config(cfg)
    base_seed = int(cfg.get("study", {}).get("base_seed", 0))
    os.makedirs(args.out, exist_ok=True)
    paths = []
    for i in range(args.n_trials):
        if isinstance(scenario, Cs1Scenario):
            data = generate_cs1_trial(scenario, base_seed + i)
        else:
            data = generate_pool_trial(scenario, base_seed + i)
        path = os.path.join(args.out, f"trial_{i:04d}.csv")
        write_long_csv(data, path)
        paths.append(path)
    meta = {
        "config": args.config,
        "base_seed": base_seed,
        "n_trials": args.n_trials,
        "files": [os.path.basename(p) for p in paths],
    }
    with open(os.path.join(args.out, "metadata.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(paths)} dataset(s) to {args.out}")
    return EXIT_OK


def _cmd_power(args) -> int:
    cfg = _load_config(args.config)
    cutoffs = None
    if args.calibrate_from:
        null_report = load_report(args.calibrate_from)
        st = cfg.get("study", {})
        cutoffs = recalibrate_cutoffs(
            null_report,
            alpha_one=float(st.get("alpha_one_sided", 0.025)),
            alpha_two=float(st.get("alpha_two_sided", 0.05)),
            include_lrt=bool(st.get("include_lrt", False)) and null_report.lrt_p is not None,
        )
    config = _study_config(cfg, cutoffs=cutoffs)
    report = run_study(config)
    paths = emit_report(report, args.out, plots=args.plots)
    for method in report.methods:
        print(f"{method:<26} rejection {report.rejection_rate(method):.4f}")
    if report.lrt_p is not None:
        print(f"{'lrt_prop_slowing':<26} rejection "
              f"{float((report.lrt_p <= report.cutoff_used('lrt_prop_slowing')).mean()):.4f}")
    print(f"excluded replications: {report.n_excluded}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    report = load_report(args.null_report)
    alpha_two = args.alpha_two if args.alpha_two is not None else 2 * args.alpha
    cutoffs = recalibrate_cutoffs(
        report,
        alpha_one=args.alpha,
        alpha_two=alpha_two,
        include_lrt=report.lrt_p is not None,
    )
    text = json.dumps(cutoffs, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return EXIT_OK


def _cmd_coverage(args) -> int:
    report = load_report(args.report)
    cov = coverage_summary(report, args.truth, args.method)
    print(f"{args.method} coverage of {args.truth:g}: {cov:.4f}")
    return EXIT_OK


def _cmd_report(args) -> int:
    report = load_report(args.study)
    out = args.out or args.study
    if args.format == "csv":
        paths = emit_report(report, out)
    else:
        from .plotting import scenario_trajectory_svg

        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, "trajectories.svg")
        scenario_trajectory_svg(report.scenario_meta, path)
        paths = [path]
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmrm",
        description="Progression models for repeated measures: fitting, "
        "simulation, and Monte-Carlo power studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model to a long-format CSV")
    p.add_argument("data", help="long CSV: subject_id,arm,group,visit,time,value")
    p.add_argument("--model", required=True, choices=VARIANTS)
    p.add_argument("--schedule", required=True, help="comma-separated visit times")
    p.add_argument("--interpolation", default="natural_cubic",
                   choices=("zero_order", "linear", "natural_cubic"))
    p.add_argument("--time-mode", default="scheduled", choices=("scheduled", "actual"))
    p.add_argument("--improvement-visits", default="",
                   help="comma-separated visit times with shared additive offsets")
    p.add_argument("--plateau-visit", type=int, default=None,
                   help="visit index where the two-parameter delay plateaus")
    p.add_argument("--gradient-tol", type=float, default=1e-4)
    p.add_argument("--out", default=None, help="optional JSON output path")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("simulate", help="generate trial datasets from a scenario config")
    p.add_argument("config", help="TOML study config")
    p.add_argument("--out", required=True)
    p.add_argument("--n-trials", type=int, default=1)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("power", help="run a Monte-Carlo study from a config")
    p.add_argument("config", help="TOML study config")
    p.add_argument("--out", required=True)
    p.add_argument("--calibrate-from", default=None,
                   help="null-run report directory supplying empirical cutoffs")
    p.add_argument("--plots", action="store_true", help="also write an SVG trajectory plot")
    p.set_defaults(func=_cmd_power)

    p = sub.add_parser("calibrate", help="empirical cutoffs from a null report")
    p.add_argument("null_report", help="report directory of a null study")
    p.add_argument("--alpha", type=float, required=True, help="one-sided level")
    p.add_argument("--alpha-two", type=float, default=None,
                   help="two-sided level for the all-visits test (default 2*alpha)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("coverage", help="CI coverage of a true effect value")
    p.add_argument("report", help="report directory")
    p.add_argument("--truth", type=float, required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.set_defaults(func=_cmd_coverage)

    p = sub.add_parser("report", help="re-emit outputs from a stored study")
    p.add_argument("study", help="report directory")
    p.add_argument("--format", default="csv", choices=("csv", "svg"))
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (PmrmError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
