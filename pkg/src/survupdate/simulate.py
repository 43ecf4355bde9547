"""Data-generating mechanisms for the dynamic updating simulation.

Time is in years.  The development cohort is followed for one year; new data
then arrives in quarters (periods 1-5), each record's clock starting at the
beginning of the window it belongs to.  Survival is exponential with a
baseline hazard that is constant within a quarter, so follow-up can be added
quarter by quarter through memorylessness.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import integrate

from .core import CovariateSpec, Dataset, DomainError

SCENARIOS = ("DecreasingEvents", "IncreasingEvents", "Rare1Pct", "NewTreatment",
             "NewTreatmentComorbidity")
COHORT_STYLES = ("OpenCohort", "NewCohorts")

COVARIATES = CovariateSpec(
    ("age", "prognostic_index", "comorbidity", "treatment", "treatment_x_comorbidity"),
    ("continuous", "continuous", "binary", "binary", "binary"),
)
PERIOD_LENGTH = 0.25


@dataclass(frozen=True)
class ScenarioConfig:
    """Full data-generating setup for one scenario.

    ``annual_event_rates`` are targets for periods 1-5; the development
    cohort uses the period-1 rate.  ``lambda_schedule`` is derived from them
    unless given explicitly.
    """

    name: str = "DecreasingEvents"
    cohort_style: str = "OpenCohort"
    annual_event_rates: tuple[float, ...] = (0.05,) * 5
    lambda_schedule: tuple[float, ...] | None = None
    beta_age: float = 0.35
    beta_prognostic: float = 0.5
    beta_comorbidity: float = 0.8
    beta_treatment: float = -0.7
    beta_interaction: float = 0.0
    age_low: float = 1.8
    age_high: float = 9.5
    prognostic_mean: float = 1.0
    prognostic_sd: float = 1.0
    comorbidity_law: str = "bernoulli"  # or "rare_age"
    p_comorbidity: float = 0.1
    rare_marginal: float = 0.01
    rare_age_threshold: float = 5.5
    treatment_law: str = "bernoulli"  # or "rollout"
    p_treatment: float = 0.3
    rollout_thresholds: tuple[float, ...] = (7.0, 5.0, 3.0, 1.8)
    rollout_uptake: float = 0.6
    rollout_comorbidity: bool = False
    interaction: bool = False
    n_dev: int = 10000
    n_period: int = 4000
    horizon: float = 0.25
    admin_censor: float = 1.0

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.name!r}")
        if self.cohort_style not in COHORT_STYLES:
            raise ValueError(f"unknown cohort style {self.cohort_style!r}")
        for key in ("annual_event_rates", "rollout_thresholds"):
            object.__setattr__(self, key, tuple(float(v) for v in getattr(self, key)))
        if len(self.annual_event_rates) != 5:
            raise ValueError("need one annual event rate per period (5)")
        if not all(0 < r < 1 for r in self.annual_event_rates):
            raise ValueError("annual event rates must lie in (0, 1)")
        for key in ("p_comorbidity", "rare_marginal", "p_treatment", "rollout_uptake"):
            if not 0 <= getattr(self, key) <= 1:
                raise ValueError(f"{key} must be a probability")
        if self.comorbidity_law not in ("bernoulli", "rare_age"):
            raise ValueError(f"unknown comorbidity law {self.comorbidity_law!r}")
        if self.treatment_law not in ("bernoulli", "rollout"):
            raise ValueError(f"unknown treatment law {self.treatment_law!r}")
        if len(self.rollout_thresholds) != 4 or np.any(np.diff(self.rollout_thresholds) > 0):
            raise ValueError("rollout thresholds: four non-increasing ages for periods 2-5")
        if self.n_dev < 1 or self.n_period < 1:
            raise ValueError("sample sizes must be positive")
        if self.lambda_schedule is None:
            object.__setattr__(self, "lambda_schedule", solve_lambda_schedule(self))
        else:
            sched = tuple(float(v) for v in self.lambda_schedule)
            if len(sched) != 5 or not all(v > 0 for v in sched):
                raise ValueError("lambda_schedule needs five positive rates")
            object.__setattr__(self, "lambda_schedule", sched)

    @property
    def beta(self) -> np.ndarray:
        return np.array([self.beta_age, self.beta_prognostic, self.beta_comorbidity,
                         self.beta_treatment, self.beta_interaction])

    def lam(self, period: int) -> float:
        """Baseline hazard for a period; the development cohort (0) uses period 1's."""
        return self.lambda_schedule[max(period, 1) - 1]

    def to_dict(self) -> dict:
        return asdict(self)


_DEFAULTS = {
    "DecreasingEvents": dict(annual_event_rates=(0.05, 0.0425, 0.035, 0.0275, 0.02)),
    "IncreasingEvents": dict(annual_event_rates=(0.05, 0.0575, 0.065, 0.0725, 0.08)),
    "Rare1Pct": dict(comorbidity_law="rare_age"),
    "NewTreatment": dict(treatment_law="rollout", p_comorbidity=0.05,
                         rollout_uptake=0.3, beta_treatment=-1.4),
    "NewTreatmentComorbidity": dict(treatment_law="rollout", p_comorbidity=0.05,
                                    rollout_uptake=0.3, beta_treatment=-1.4,
                                    rollout_comorbidity=True, interaction=True,
                                    beta_interaction=0.5),
}


def scenario_config(name: str, cohort_style: str = "OpenCohort", **overrides) -> ScenarioConfig:
    """Default configuration for a named scenario, with keyword overrides."""
    if name not in _DEFAULTS:
        raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    kw = {**_DEFAULTS[name], **overrides}
    return ScenarioConfig(name=name, cohort_style=cohort_style, **kw)


def load_scenario(path, **overrides) -> ScenarioConfig:
    with open(path) as fh:
        d = json.load(fh)
    d.update({k: v for k, v in overrides.items() if v is not None})
    name = d.pop("name", "DecreasingEvents")
    style = d.pop("cohort_style", "OpenCohort")
    return scenario_config(name, style, **d)


def rare_probability(cfg: ScenarioConfig, age):
    """P(rare factor | age): zero up to the threshold, linear above, 1% marginal."""
    age = np.asarray(age, dtype=float)
    hi, lo, thr = cfg.age_high, cfg.age_low, cfg.rare_age_threshold
    slope = cfg.rare_marginal * (hi - lo) / (0.5 * (hi - thr) ** 2)
    return np.clip(slope * (age - thr), 0.0, 1.0)


def rare_risk_assignment(cfg: ScenarioConfig, age, u01):
    u01 = np.asarray(u01, dtype=float)
    if np.any((u01 < 0) | (u01 >= 1)):
        raise DomainError("u01 must lie in [0, 1)")
    out = u01 < rare_probability(cfg, age)
    return bool(out) if out.ndim == 0 else out


def _eligible(cfg: ScenarioConfig, period: int, age, comorbidity):
    if period < 2:
        return np.zeros(np.shape(age), dtype=bool)
    thr = cfg.rollout_thresholds[min(period, 5) - 2]
    elig = np.asarray(age) >= thr
    if cfg.rollout_comorbidity:
        elig = elig | (np.asarray(comorbidity) > 0)
    return elig


def treatment_rollout(cfg: ScenarioConfig, period: int, age, comorbidity=False):
    """Probability that an untreated subject takes up treatment in ``period``."""
    if not 1 <= period <= 5:
        raise DomainError("period must be in 1..5")
    p = np.where(_eligible(cfg, period, age, comorbidity), cfg.rollout_uptake, 0.0)
    return float(p) if p.ndim == 0 else p


def cumulative_treatment_probability(cfg: ScenarioConfig, period: int, age, comorbidity=False):
    """P(treated by ``period``) for someone who has been eligible since rollout reached them."""
    k = sum(np.asarray(_eligible(cfg, u, age, comorbidity), dtype=int)
            for u in range(2, period + 1)) if period >= 2 else np.zeros(np.shape(age), int)
    return 1.0 - (1.0 - cfg.rollout_uptake) ** np.asarray(k)


def solve_lambda_schedule(cfg: ScenarioConfig) -> tuple[float, ...]:
    """Baseline hazards with 1 - exp(-E[lambda e^eta] * 1 year) equal to each target rate.

    The expectation is over the development covariate law (no treatment
    rollout yet) and is computed by quadrature over age.
    """
    b = cfg.beta
    width = cfg.age_high - cfg.age_low

    def integrand(a):
        if cfg.comorbidity_law == "rare_age":
            p3 = float(rare_probability(cfg, a))
        else:
            p3 = cfg.p_comorbidity
        return math.exp(b[0] * a) * (1 - p3 + p3 * math.exp(b[2])) / width

    pts = [cfg.rare_age_threshold] if cfg.comorbidity_law == "rare_age" else None
    age_part, _ = integrate.quad(integrand, cfg.age_low, cfg.age_high, points=pts)
    prog_part = math.exp(b[1] * cfg.prognostic_mean + 0.5 * (b[1] * cfg.prognostic_sd) ** 2)
    p4 = cfg.p_treatment if cfg.treatment_law == "bernoulli" else 0.0
    treat_part = 1 - p4 + p4 * math.exp(b[3])
    mean_rel = age_part * prog_part * treat_part
    return tuple(-math.log1p(-r) / mean_rel for r in cfg.annual_event_rates)


def model_covariates(cfg: ScenarioConfig, period: int) -> list[str]:
    """Predictors available to a model updated with data from ``period``."""
    names = ["age", "prognostic_index", "comorbidity"]
    if cfg.treatment_law == "bernoulli" or period >= 2:
        names.append("treatment")
        if cfg.interaction and period >= 2:
            names.append("treatment_x_comorbidity")
    return names


def gen_survival_time(lam, eta, u01):
    """Inverse-transform exponential draw: T = -log(u) / (lambda exp(eta))."""
    u01 = np.asarray(u01, dtype=float)
    if np.any((u01 <= 0) | (u01 > 1)):
        raise DomainError("u01 must lie in (0, 1]")
    if np.any(np.asarray(lam) <= 0):
        raise DomainError("lambda must be positive")
    t = -np.log(u01) / (np.asarray(lam) * np.exp(eta))
    return float(t) if np.ndim(t) == 0 else t


def _draw_covariates(cfg: ScenarioConfig, n: int, period: int, rng) -> np.ndarray:
    age = rng.uniform(cfg.age_low, cfg.age_high, n)
    prog = rng.normal(cfg.prognostic_mean, cfg.prognostic_sd, n)
    u3 = rng.random(n)
    if cfg.comorbidity_law == "rare_age":
        como = rare_risk_assignment(cfg, age, u3).astype(float)
    else:
        como = (u3 < cfg.p_comorbidity).astype(float)
    u4 = rng.random(n)
    if cfg.treatment_law == "bernoulli":
        treat = (u4 < cfg.p_treatment).astype(float)
    else:
        treat = (u4 < cumulative_treatment_probability(cfg, period, age, como)).astype(float)
    inter = como * treat if cfg.interaction else np.zeros(n)
    return np.column_stack([age, prog, como, treat, inter])


def _event_times(cfg: ScenarioConfig, X: np.ndarray, period: int, rng) -> np.ndarray:
    u = 1.0 - rng.random(len(X))  # (0, 1]
    return gen_survival_time(cfg.lam(period), X @ cfg.beta, u)


@dataclass(frozen=True, eq=False)
class CohortState:
    """Open-cohort membership at the start of the next period."""

    ids: np.ndarray
    X: np.ndarray
    entry_period: np.ndarray
    follow_up: np.ndarray
    period: int
    next_id: int

    def __post_init__(self):
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("a subject appears twice in the cohort")


def _ids(start: int, n: int) -> np.ndarray:
    return np.array([f"s{k}" for k in range(start, start + n)])


def gen_dev_cohort(cfg: ScenarioConfig, seed) -> Dataset:
    """Development data: ``n_dev`` subjects followed for one year."""
    rng = np.random.default_rng(seed)
    X = _draw_covariates(cfg, cfg.n_dev, 0, rng)
    T = _event_times(cfg, X, 0, rng)
    event = T <= cfg.admin_censor
    return Dataset(COVARIATES, _ids(0, cfg.n_dev), np.where(event, T, cfg.admin_censor),
                   event, X, period=0)


def initial_state(cfg: ScenarioConfig, dev: Dataset, seed) -> CohortState:
    """Open cohort at the start of period 1: development survivors plus replacements."""
    rng = np.random.default_rng(seed)
    keep = ~dev.event
    n_new = int(dev.event.sum())
    start = len(dev)
    ids = np.concatenate([dev.ids[keep], _ids(start, n_new)])
    X = np.vstack([dev.X[keep], _draw_covariates(cfg, n_new, 0, rng)])
    entry = np.concatenate([np.zeros(keep.sum(), int), np.ones(n_new, int)])
    follow = np.concatenate([dev.time[keep], np.zeros(n_new)])
    return CohortState(ids, X, entry, follow, 0, start + n_new)


def gen_period_data(cfg: ScenarioConfig, state: CohortState | None, period: int, seed):
    """One quarter of new data and the cohort state carried into the next quarter.

    OpenCohort: every member gains a quarter of exposure at ``lam(period)``;
    untreated members eligible for the rollout take up treatment first;
    members with events are replaced by fresh subjects at the next period.
    NewCohorts: ``n_period`` fresh subjects.  Records are censored at the
    period end.
    """
    if not 1 <= period <= 5:
        raise DomainError("period must be in 1..5")
    rng = np.random.default_rng(seed)
    L = PERIOD_LENGTH
    if cfg.cohort_style == "NewCohorts":
        next_id = cfg.n_dev if state is None else state.next_id
        X = _draw_covariates(cfg, cfg.n_period, period, rng)
        T = _event_times(cfg, X, period, rng)
        event = T <= L
        ids = _ids(next_id, cfg.n_period)
        data = Dataset(COVARIATES, ids, np.where(event, T, L), event, X, period)
        new_state = CohortState(ids[~event], X[~event], np.full((~event).sum(), period),
                                np.full((~event).sum(), L), period, next_id + cfg.n_period)
        return data, new_state
    if state is None:
        raise ValueError("open cohort generation needs a cohort state")
    X = state.X.copy()
    if cfg.treatment_law == "rollout":
        untreated = X[:, 3] == 0
        take = untreated & (rng.random(len(X)) < treatment_rollout(cfg, period, X[:, 0], X[:, 2]))
        X[take, 3] = 1.0
        if cfg.interaction:
            X[:, 4] = X[:, 2] * X[:, 3]
    T = _event_times(cfg, X, period, rng)
    event = T <= L
    time = np.where(event, T, L)
    data = Dataset(COVARIATES, state.ids, time, event, X, period, state.entry_period)
    n_new = int(event.sum())
    keep = ~event
    new_state = CohortState(
        np.concatenate([state.ids[keep], _ids(state.next_id, n_new)]),
        np.vstack([X[keep], _draw_covariates(cfg, n_new, period, rng)]),
        np.concatenate([state.entry_period[keep], np.full(n_new, period + 1)]),
        np.concatenate([state.follow_up[keep] + L, np.zeros(n_new)]),
        period,
        state.next_id + n_new,
    )
    return data, new_state


def window_dataset(quarters: list[Dataset], start: float, length: float = PERIOD_LENGTH) -> Dataset:
    """Records observed in ``[start, start + length)``, clocks reset to each record's entry.

    ``quarters[u - 1]`` must hold period ``u``.  A window straddling a quarter
    boundary combines members alive at ``start`` (with covariates from the
    earlier quarter) with their continuation and any entrants in the next
    quarter.
    """
    if length != PERIOD_LENGTH:
        raise ValueError("windows must be one quarter long")
    q = int(math.floor(start / PERIOD_LENGTH + 1e-9))
    offset = start - q * PERIOD_LENGTH
    cur = quarters[q]
    if offset < 1e-9:
        return cur
    nxt = quarters[q + 1]
    L = PERIOD_LENGTH
    alive = cur.time > offset
    a_ids = cur.ids[alive]
    a_time = cur.time[alive] - offset
    a_event = cur.event[alive].copy()
    a_X = cur.X[alive]
    # continuation of members still under observation at the quarter boundary
    sorter = np.argsort(nxt.ids)
    loc = np.searchsorted(nxt.ids, a_ids, sorter=sorter)
    loc = sorter[np.minimum(loc, len(nxt) - 1)]
    cont = ~a_event & (cur.time[alive] >= L) & (nxt.ids[loc] == a_ids)
    j = loc[cont]
    a_time[cont] = (L - offset) + np.minimum(nxt.time[j], offset)
    a_event[cont] = nxt.event[j] & (nxt.time[j] <= offset)
    entrants = np.ones(len(nxt), dtype=bool)
    entrants[j] = False
    b_time = np.minimum(nxt.time[entrants], offset)
    b_event = nxt.event[entrants] & (nxt.time[entrants] <= offset)
    return Dataset(
        cur.spec,
        np.concatenate([a_ids, nxt.ids[entrants]]),
        np.concatenate([a_time, b_time]),
        np.concatenate([a_event, b_event]),
        np.vstack([a_X, nxt.X[entrants]]),
        cur.period,
        np.concatenate([cur.entry_period[alive], nxt.entry_period[entrants]]),
    )


@dataclass(frozen=True, eq=False)
class World:
    """All data generated for one replicate."""

    cfg: ScenarioConfig
    dev: Dataset
    quarters: list[Dataset] = field(default_factory=list)

    def window(self, start: float) -> Dataset:
        return window_dataset(self.quarters, start)


def simulate_world(cfg: ScenarioConfig, seed) -> World:
    """Development cohort plus the five quarters of new data, deterministic in ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    dev_ss, init_ss, *period_ss = ss.spawn(7)
    dev = gen_dev_cohort(cfg, dev_ss)
    state = initial_state(cfg, dev, init_ss) if cfg.cohort_style == "OpenCohort" else None
    quarters = []
    for u in range(1, 6):
        data, state = gen_period_data(cfg, state, u, period_ss[u - 1])
        quarters.append(data)
    return World(cfg, dev, quarters)


def with_overrides(cfg: ScenarioConfig, **kw) -> ScenarioConfig:
    """Copy of ``cfg`` with fields replaced; the hazard schedule is re-solved
    unless it is among the overrides."""
    if "lambda_schedule" not in kw:
        kw["lambda_schedule"] = None
    return replace(cfg, **kw)
