"""Monte Carlo harness for the dynamic updating study.

Each replicate fits the original model on the development cohort and then,
for every period u = 1..5, evaluates the current model on period u's data
before updating it with that same data.  All strategies within a replicate
see the same simulated world, so per-replicate results are paired.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import __version__
from .cox import FitOptions, fit_cox
from .metrics import MetricReport, evaluate
from .simulate import COVARIATES, PERIOD_LENGTH, ScenarioConfig, World, model_covariates, simulate_world
from .updating import ModelState, UpdateStrategy, apply_update

ANALYST_TIMES = (0.0, 0.1, 0.25, 0.46, 0.5, 0.69, 0.75)
N_PERIODS = 5
METRICS = ("c_index", "brier", "cal_intercept", "cal_slope")


def default_strategies(analyst_times: Sequence[float] = ANALYST_TIMES) -> tuple[UpdateStrategy, ...]:
    out = [UpdateStrategy("no_update"), UpdateStrategy("recalibrate_quarterly"),
           UpdateStrategy("refit_quarterly"), UpdateStrategy("bayes_quarterly")]
    out += [UpdateStrategy("recalibrate_once", at) for at in analyst_times]
    out += [UpdateStrategy("refit_once", at) for at in analyst_times]
    return tuple(out)


@dataclass(frozen=True)
class StudyPlan:
    scenario: ScenarioConfig
    strategies: tuple[UpdateStrategy, ...] = field(default_factory=default_strategies)
    n_sim: int = 100
    root_seed: int = 42
    horizon: float = 0.25
    analyst_times: tuple[float, ...] = ANALYST_TIMES
    n_draws: int = 1000
    fit_options: FitOptions = FitOptions()

    def __post_init__(self):
        if self.n_sim < 1:
            raise ValueError("n_sim must be >= 1")
        if not all(0 <= a < 1 for a in self.analyst_times):
            raise ValueError("analyst times must lie in [0, 1)")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        names = [s.name for s in self.strategies]
        if len(set(names)) != len(names):
            raise ValueError("duplicate strategies in plan")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "strategies": [s.name for s in self.strategies],
            "n_sim": self.n_sim,
            "root_seed": self.root_seed,
            "horizon": self.horizon,
            "analyst_times": list(self.analyst_times),
            "n_draws": self.n_draws,
            "fit_options": asdict(self.fit_options),
        }


@dataclass
class ReplicateRow:
    strategy: str
    period: int
    replicate: int
    report: MetricReport
    retained_previous: bool
    update_count: int
    data_end: float  # latest calendar time (years) of any data behind the evaluated model
    coefficients: dict[str, float]


def analyst_window(at: float) -> float:
    """Start of the 3-month training window for a one-time update at year fraction ``at``.

    Data arrive at whole-month boundaries, so the window starts at the
    beginning of the month containing ``at``.
    """
    return math.floor(at * 12 + 1e-9) / 12


def _once_update_period(at: float) -> int:
    """Period after whose evaluation the one-time update is deployed."""
    end = analyst_window(at) + PERIOD_LENGTH
    return int(math.ceil(end / PERIOD_LENGTH - 1e-9))


def _replicate_seed(root_seed: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(root_seed).spawn(replicate + 1)[replicate]


def run_replicate(plan: StudyPlan, strategy: UpdateStrategy | Sequence[UpdateStrategy] | None = None,
                  seed=None, replicate: int = 0) -> list[ReplicateRow]:
    """Run the dynamic loop for one simulated world.

    ``strategy`` may be one strategy, a list, or ``None`` for all strategies
    in the plan.  ``seed`` defaults to the plan's seed for ``replicate``.
    Returns one row per (strategy, period), periods 1-5.
    """
    if strategy is None:
        strategies = plan.strategies
    elif isinstance(strategy, UpdateStrategy):
        strategies = (strategy,)
    else:
        strategies = tuple(strategy)
    if seed is None:
        seed = _replicate_seed(plan.root_seed, replicate)
    world = simulate_world(plan.scenario, seed)
    return _run_world(plan, strategies, world, replicate)


def _run_world(plan: StudyPlan, strategies, world: World, replicate: int) -> list[ReplicateRow]:
    cfg = plan.scenario
    opts = plan.fit_options
    m0 = ModelState(fit_cox(world.dev.select(model_covariates(cfg, 0)), opts))
    # the model is stored alongside its report so that its id cannot be reused
    cache: dict[tuple[int, int], tuple[object, MetricReport]] = {}
    windows: dict[float, object] = {}
    rows = []
    for strat in strategies:
        state = ModelState(m0.model, strat.name)
        data_end = 0.0
        for u in range(1, N_PERIODS + 1):
            data = world.quarters[u - 1]
            key = (id(state.model), u)
            if key not in cache:
                cache[key] = (state.model, evaluate(
                    state.model, data, plan.horizon, period=u, n_draws=plan.n_draws,
                    seed=np.random.SeedSequence([plan.root_seed, replicate, u]),
                ))
            rep = cache[key][1]
            rows.append(ReplicateRow(
                strat.name, u, replicate,
                MetricReport(**{**asdict(rep), "strategy": strat.name}),
                state.retained_previous, state.update_count, data_end,
                _coefficients(state),
            ))
            if u == N_PERIODS:
                break
            if strat.quarterly:
                new = apply_update(state, strat, data, model_covariates(cfg, u), opts)
                end = u * PERIOD_LENGTH
            elif strat.at is not None and _once_update_period(strat.at) == u:
                start = analyst_window(strat.at)
                if start not in windows:
                    windows[start] = world.window(start)
                q = int(math.floor(start / PERIOD_LENGTH + 1e-9)) + 1
                new = apply_update(state, strat, windows[start], model_covariates(cfg, q), opts)
                end = start + PERIOD_LENGTH
            else:
                state = ModelState(state.model, state.strategy, state.update_count, False)
                continue
            if not new.retained_previous:
                data_end = end
            state = new
    return rows


def _coefficients(state: ModelState) -> dict[str, float]:
    coefs = state.coefficients
    return {n: coefs.get(n, math.nan) for n in COVARIATES.names}


ROW_COLUMNS = (
    "scenario", "cohort_style", "strategy", "period", "replicate",
    *METRICS, "retained_previous", "update_count", "n", "n_events", "data_end",
    *(f"coef_{n}" for n in COVARIATES.names),
)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def row_record(cfg: ScenarioConfig, row: ReplicateRow) -> dict:
    r = row.report
    rec = {
        "scenario": cfg.name, "cohort_style": cfg.cohort_style, "strategy": row.strategy,
        "period": row.period, "replicate": row.replicate,
        "c_index": r.c_index, "brier": r.brier, "cal_intercept": r.cal_intercept,
        "cal_slope": r.cal_slope, "retained_previous": row.retained_previous,
        "update_count": row.update_count, "n": r.n, "n_events": r.n_events,
        "data_end": row.data_end,
    }
    rec.update({f"coef_{k}": v for k, v in row.coefficients.items()})
    return rec


def mean_mcse(values) -> tuple[float, float, int]:
    """Mean and Monte Carlo standard error (sd / sqrt(n)); NaNs are ignored.

    The MCSE is NaN (not available) with fewer than two values.
    """
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    n = len(v)
    if n == 0:
        return math.nan, math.nan, 0
    mean = float(np.mean(v))
    mcse = float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return mean, mcse, n


@dataclass
class StudyResult:
    plan: StudyPlan
    rows: list[ReplicateRow]

    def records(self) -> list[dict]:
        return [row_record(self.plan.scenario, r) for r in self.rows]

    def values(self, strategy: str, period: int, column: str) -> np.ndarray:
        """Per-replicate values of ``column``, ordered by replicate index."""
        recs = [row_record(self.plan.scenario, r) for r in self.rows
                if r.strategy == strategy and r.period == period]
        recs.sort(key=lambda d: d["replicate"])
        return np.array([float(d[column]) for d in recs])

    def aggregate(self) -> list[dict]:
        """Mean and MCSE per (strategy, period) for every metric and coefficient."""
        cols = [*METRICS, *(f"coef_{n}" for n in COVARIATES.names)]
        out = []
        for strat in self.plan.strategies:
            for u in range(1, N_PERIODS + 1):
                agg = {"scenario": self.plan.scenario.name,
                       "cohort_style": self.plan.scenario.cohort_style,
                       "strategy": strat.name, "period": u}
                agg["n_sim"] = len(self.values(strat.name, u, "c_index"))
                for c in cols:
                    mean, mcse, _ = mean_mcse(self.values(strat.name, u, c))
                    agg[f"{c}_mean"] = mean
                    agg[f"{c}_mcse"] = mcse
                agg["retained_fraction"] = float(np.mean(self.values(strat.name, u, "retained_previous")))
                out.append(agg)
        return out

    def refit_failure_fraction(self, strategy: str = "refit_quarterly") -> dict[int, float]:
        """Fraction of replicates whose update with period u's data fell back, u = 1..4."""
        return {u: float(np.mean(self.values(strategy, u + 1, "retained_previous")))
                for u in range(1, N_PERIODS)}

    def compare(self, a: str, b: str, period: int, metric: str = "c_index"):
        return wilcoxon_signed_rank(self.values(a, period, metric), self.values(b, period, metric))


def _replicate_job(args):
    plan, replicate = args
    return run_replicate(plan, None, None, replicate)


def run_study(plan: StudyPlan, workers: int = 1, out_dir=None, progress=None) -> StudyResult:
    """Run every replicate; output is identical for any ``workers``.

    With ``out_dir`` set, per-replicate rows are appended to
    ``results.partial.csv`` as replicates finish (in replicate order), so a
    failure leaves the completed part on disk.
    """
    jobs = [(plan, r) for r in range(plan.n_sim)]
    partial = None
    writer = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        partial = open(os.path.join(out_dir, "results.partial.csv"), "w", newline="")
        writer = csv.writer(partial)
        writer.writerow(ROW_COLUMNS)
    rows: list[ReplicateRow] = []
    try:
        if workers > 1:
            pool = ProcessPoolExecutor(max_workers=workers)
            results = pool.map(_replicate_job, jobs, chunksize=1)
        else:
            pool = None
            results = map(_replicate_job, jobs)
        for k, rep_rows in enumerate(results):
            rows.extend(rep_rows)
            if writer is not None:
                for r in rep_rows:
                    rec = row_record(plan.scenario, r)
                    writer.writerow([_fmt(rec[c]) for c in ROW_COLUMNS])
                partial.flush()
            if progress is not None:
                progress(k + 1, plan.n_sim)
        if pool is not None:
            pool.shutdown()
    finally:
        if partial is not None:
            partial.close()
    return StudyResult(plan, rows)


def _write_csv(path, columns, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for rec in records:
            w.writerow([_fmt(rec[c]) for c in columns])


def emit_reports(result: StudyResult, out_dir) -> dict[str, str]:
    """Write results, aggregate table, figure series and a run manifest."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "results": os.path.join(out_dir, "results.csv"),
        "aggregate": os.path.join(out_dir, "aggregate.csv"),
        "fig_c_index": os.path.join(out_dir, "fig_c_index.csv"),
        "fig_cal_intercept": os.path.join(out_dir, "fig_cal_intercept.csv"),
        "manifest": os.path.join(out_dir, "manifest.json"),
    }
    _write_csv(paths["results"], ROW_COLUMNS, result.records())
    agg = result.aggregate()
    _write_csv(paths["aggregate"], list(agg[0]), agg)
    for key, metric in (("fig_c_index", "c_index"), ("fig_cal_intercept", "cal_intercept")):
        series = [{"period": a["period"], "strategy": a["strategy"],
                   "mean": a[f"{metric}_mean"], "mcse": a[f"{metric}_mcse"]} for a in agg]
        _write_csv(paths[key], ["period", "strategy", "mean", "mcse"], series)
    manifest = {
        "code_version": __version__,
        "root_seed": result.plan.root_seed,
        "plan": result.plan.to_dict(),
        "refit_failure_fraction": {
            s.name: result.refit_failure_fraction(s.name)
            for s in result.plan.strategies if s.kind.startswith("refit")
        },
        "files": {k: os.path.basename(v) for k, v in paths.items() if k != "manifest"},
    }
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    partial = os.path.join(out_dir, "results.partial.csv")
    if os.path.exists(partial):
        os.remove(partial)
    return paths


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _signed_rank_counts(ranks2: np.ndarray) -> np.ndarray:
    """Number of sign assignments giving each value of 2 * W+ (ranks doubled to integers)."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=float)
    counts[0] = 1.0
    for r in ranks2:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r] if r else counts
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(paired_a, paired_b, exact_max_n: int = 25) -> tuple[float, float]:
    """Two-sided Wilcoxon signed-rank test on paired differences a - b.

    Zero differences are dropped and tied |differences| share mid-ranks.  The
    statistic is W+, the sum of ranks of positive differences.  The p-value is
    exact (by enumeration of the signed-rank distribution) for up to
    ``exact_max_n`` non-zero differences, otherwise from the normal
    approximation with tie and continuity corrections.  All-zero differences
    give p = 1.
    """
    a = np.asarray(paired_a, dtype=float)
    b = np.asarray(paired_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 1:
        raise ValueError("need two equal-length, non-empty samples")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    absd = np.abs(d)
    order = np.argsort(absd, kind="stable")
    ranks = np.empty(n)
    sorted_abs = absd[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    w_plus = float(ranks[d > 0].sum())
    if n <= exact_max_n:
        ranks2 = np.round(2 * ranks).astype(int)
        counts = _signed_rank_counts(ranks2)
        probs = counts / counts.sum()
        w2 = int(round(2 * w_plus))
        lower = probs[: w2 + 1].sum()
        upper = probs[w2:].sum()
        return w_plus, float(min(1.0, 2 * min(lower, upper)))
    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(absd, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - np.sum(tie_counts**3 - tie_counts) / 48
    if var <= 0:
        return w_plus, 1.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return w_plus, float(min(1.0, math.erfc(z / math.sqrt(2))))


def pairwise_sign_enumeration(d) -> float:
    """Brute-force two-sided p-value over all 2^n sign flips (small n only)."""
    d = np.asarray(d, dtype=float)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 1.0
    absd = np.abs(d)
    ranks = np.array([np.sum(absd < x) + (np.sum(absd == x) + 1) / 2 for x in absd])
    w_obs = ranks[d > 0].sum()
    stats = [sum(r for r, s in zip(ranks, signs) if s) for signs in itertools.product([0, 1], repeat=n)]
    stats = np.array(stats)
    lower = np.mean(stats <= w_obs + 1e-9)
    upper = np.mean(stats >= w_obs - 1e-9)
    return float(min(1.0, 2 * min(lower, upper)))
