"""Command-line entry point: ``survupdate {simulate,fit,evaluate,study,compare}``.

Exit codes: 0 success, 2 configuration error, 3 input/output error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .core import Dataset, SurvivalError, load_model, save_model
from .cox import FitOptions, fit_cox
from .metrics import evaluate
from .simulate import COHORT_STYLES, SCENARIOS, scenario_config, simulate_world
from .study import (
    ANALYST_TIMES, METRICS, StudyPlan, default_strategies, emit_reports, read_results,
    run_study, wilcoxon_signed_rank,
)
from .updating import ModelState, UpdateStrategy, apply_update

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

PLAN_KEYS = ("strategies", "n_sim", "seed", "horizon", "analyst_times", "n_draws", "workers")


class ConfigError(Exception):
    pass


def _read_config(path) -> dict:
    """Config file: JSON object with plan keys plus an optional ``scenario`` object."""
    if path is None:
        return {}
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(cfg) - set(PLAN_KEYS) - {"scenario"}
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return cfg


def _scenario(args, file_cfg: dict):
    sc = dict(file_cfg.get("scenario", {}))
    name = args.scenario or sc.pop("name", "DecreasingEvents")
    sc.pop("name", None)
    style = args.cohort_style or sc.pop("cohort_style", "OpenCohort")
    sc.pop("cohort_style", None)
    if "lambda_schedule" in sc and sc["lambda_schedule"] is not None:
        sc["lambda_schedule"] = tuple(sc["lambda_schedule"])
    if "annual_event_rates" in sc:
        sc["annual_event_rates"] = tuple(sc["annual_event_rates"])
    try:
        return scenario_config(name, style, **sc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _strategies(spec, analyst_times):
    if spec is None:
        return default_strategies(analyst_times)
    items = spec.split(",") if isinstance(spec, str) else list(spec)
    try:
        return tuple(UpdateStrategy.parse(s) for s in items if s.strip())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _pick(args, file_cfg, key, default):
    v = getattr(args, key, None)
    if v is not None:
        return v
    return file_cfg.get(key, default)


def build_plan(args) -> tuple[StudyPlan, int]:
    file_cfg = _read_config(args.config)
    scenario = _scenario(args, file_cfg)
    analyst_times = tuple(file_cfg.get("analyst_times", ANALYST_TIMES))
    try:
        plan = StudyPlan(
            scenario=scenario,
            strategies=_strategies(_pick(args, file_cfg, "strategies", None), analyst_times),
            n_sim=int(_pick(args, file_cfg, "n_sim", 100)),
            root_seed=int(_pick(args, file_cfg, "seed", 42)),
            horizon=float(file_cfg.get("horizon", 0.25)),
            analyst_times=analyst_times,
            n_draws=int(file_cfg.get("n_draws", 1000)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return plan, int(_pick(args, file_cfg, "workers", 1))


def cmd_simulate(args) -> int:
    plan, _ = build_plan(args)
    world = simulate_world(plan.scenario, plan.root_seed)
    os.makedirs(args.out, exist_ok=True)
    world.dev.to_csv(os.path.join(args.out, "dev.csv"))
    for u, d in enumerate(world.quarters, start=1):
        d.to_csv(os.path.join(args.out, f"period_{u}.csv"))
    with open(os.path.join(args.out, "scenario.json"), "w") as fh:
        json.dump(plan.scenario.to_dict(), fh, indent=2, sort_keys=True)
    return EXIT_OK


def _load_data(path, columns=None, period=0) -> Dataset:
    data = Dataset.from_csv(path, period=period)
    return data.select(columns) if columns else data


def cmd_fit(args) -> int:
    columns = args.covariates.split(",") if args.covariates else None
    data = _load_data(args.data, columns, args.period)
    if args.model is None:
        model = fit_cox(data, FitOptions())
    else:
        try:
            strategy = UpdateStrategy.parse(args.strategy)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        state = ModelState(load_model(args.model))
        new = apply_update(state, strategy, data, columns or list(data.spec.names))
        if new.retained_previous:
            print("update failed; previous model retained", file=sys.stderr)
        model = new.model
    save_model(model, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    data = _load_data(args.data, period=args.period)
    rep = evaluate(model, data, args.horizon, period=args.period, n_draws=args.n_draws, seed=args.seed)
    out = {k: getattr(rep, k) for k in (*METRICS, "n", "n_events", "period")}
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_study(args) -> int:
    plan, workers = build_plan(args)

    def progress(k, n):
        if not args.quiet:
            print(f"replicate {k}/{n}", file=sys.stderr)

    result = run_study(plan, workers=workers, out_dir=args.out, progress=progress)
    paths = emit_reports(result, args.out)
    if not args.quiet:
        for k, v in paths.items():
            print(f"{k}: {v}")
    return EXIT_OK


def cmd_compare(args) -> int:
    def series(path, strategy):
        rows = [r for r in read_results(path)
                if r["strategy"] == strategy and int(r["period"]) == args.period]
        if not rows:
            raise ConfigError(f"no rows for strategy {strategy!r}, period {args.period} in {path}")
        rows.sort(key=lambda r: int(r["replicate"]))
        return {int(r["replicate"]): float(r[args.metric]) for r in rows}

    a = series(args.a, args.strategy_a)
    b = series(args.b or args.a, args.strategy_b)
    common = sorted(set(a) & set(b))
    if not common:
        raise ConfigError("no paired replicates")
    xa = np.array([a[r] for r in common])
    xb = np.array([b[r] for r in common])
    stat, p = wilcoxon_signed_rank(xa, xb)
    print(json.dumps({"n": len(common), "mean_difference": float(np.mean(xa - xb)),
                      "statistic": stat, "p_value": p}, indent=2))
    return EXIT_OK


def _add_common(p, seed=True):
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--cohort-style", choices=COHORT_STYLES)
    p.add_argument("--config", help="JSON config file; flags override its values")
    if seed:
        p.add_argument("--seed", type=int)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survupdate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write one replicate's datasets as CSV")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a Cox model, or update an existing model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", help="previous model (JSON); omit to fit from scratch")
    p.add_argument("--strategy", default="refit_quarterly")
    p.add_argument("--covariates", help="comma-separated columns to use")
    p.add_argument("--period", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="metrics of a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=float, default=0.25)
    p.add_argument("--period", type=int, default=0)
    p.add_argument("--n-draws", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("study", help="run the Monte Carlo study")
    _add_common(p)
    p.add_argument("--strategies", help="comma-separated strategy names, e.g. no_update,refit_once@0.46")
    p.add_argument("--n-sim", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("compare", help="paired Wilcoxon signed-rank test between two strategies")
    p.add_argument("--a", required=True, help="results CSV")
    p.add_argument("--b", help="second results CSV (default: same as --a)")
    p.add_argument("--strategy-a", required=True)
    p.add_argument("--strategy-b", required=True)
    p.add_argument("--metric", choices=METRICS, default="c_index")
    p.add_argument("--period", type=int, required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SurvivalError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
