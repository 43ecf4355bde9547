"""Out-of-sample performance: IPCW concordance, IPCW Brier score, weak calibration.

Censoring weights come from the reverse Kaplan-Meier estimate G of the
censoring distribution.  A subject whose status at time s is known was
uncensored on [0, s), so weights use the left limit G(s-).  For survivors this
matters only when censoring happens exactly at the horizon, which is the case
for administratively censored period data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bayes import posterior_draws
from .core import SURVIVAL, BayesPHModel, CoxModel, Dataset, StepFunction, SurvivalPrediction

CLAMP = 1e-10


@dataclass(frozen=True, eq=False)
class EvalInput:
    """Predictions at a shared horizon aligned with observed outcomes.

    ``cumhaz`` maps per-subject times to each subject's predicted cumulative
    hazard; ``baseline_cumhaz`` gives the model's baseline cumulative hazard;
    ``lp`` holds the linear predictors.  All three are needed only by
    :func:`calibration`.
    """

    survival: np.ndarray
    time: np.ndarray
    event: np.ndarray
    horizon: float
    lp: np.ndarray | None = None
    cumhaz: Callable[[np.ndarray], np.ndarray] | None = None
    baseline_cumhaz: Callable[[np.ndarray], np.ndarray] | None = None
    ids: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "survival", np.asarray(self.survival, dtype=float))
        object.__setattr__(self, "time", np.asarray(self.time, dtype=float))
        object.__setattr__(self, "event", np.asarray(self.event, dtype=bool))
        if not (self.survival.shape == self.time.shape == self.event.shape):
            raise ValueError("predictions and outcomes must be aligned")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def predictions(self) -> list[SurvivalPrediction]:
        ids = self.ids if self.ids is not None else np.arange(len(self.time)).astype(str)
        lp = self.lp if self.lp is not None else np.full(len(self.time), np.nan)
        return [SurvivalPrediction(str(i), self.horizon, float(s), float(e))
                for i, s, e in zip(ids, self.survival, lp)]


@dataclass
class MetricReport:
    c_index: float
    brier: float
    cal_intercept: float
    cal_slope: float
    n: int
    n_events: int
    period: int = 0
    strategy: str = ""
    notes: dict = field(default_factory=dict)


def censoring_km(time, event) -> StepFunction:
    """Reverse Kaplan-Meier estimate of the censoring survival function G.

    Censorings are the "events"; at tied times, events leave the risk set
    before the censorings are counted.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    if len(time) == 0:
        raise ValueError("need at least one record")
    cens_times, cens_counts = np.unique(time[~event], return_counts=True)
    if len(cens_times) == 0:
        return StepFunction(np.zeros(0), np.zeros(0), role=SURVIVAL)
    at_risk = len(time) - np.searchsorted(np.sort(time), cens_times, side="left")
    at_risk = at_risk - _tied_events(time, event, cens_times)
    values = np.cumprod(1.0 - cens_counts / at_risk)
    return StepFunction(cens_times, np.clip(values, 0.0, 1.0), role=SURVIVAL)


def _tied_events(time, event, at):
    ev_times, ev_counts = np.unique(time[event], return_counts=True)
    idx = np.searchsorted(ev_times, at)
    idx_c = np.minimum(idx, max(len(ev_times) - 1, 0))
    hit = (idx < len(ev_times)) & (ev_times[idx_c] == at) if len(ev_times) else np.zeros(len(at), bool)
    out = np.zeros(len(at), dtype=int)
    out[hit] = ev_counts[idx_c[hit]]
    return out


def ipcw_cindex(inp: EvalInput, G: StepFunction | None = None) -> float:
    """Concordance truncated at the horizon with weights G(T_i-)^-2.

    Usable pairs have T_i < T_j, T_i <= horizon and an event for i.  The pair
    is concordant when i has the lower predicted survival (higher risk); ties
    score 1/2.  Survival is compared directly since 1 - S loses precision.  Returns NaN when no pair
    is usable.
    """
    G = censoring_km(inp.time, inp.event) if G is None else G
    surv = inp.survival
    idx = np.flatnonzero(inp.event & (inp.time <= inp.horizon))
    if len(idx) == 0:
        return math.nan
    g = G.left_limit(inp.time[idx])
    ok = g > 0
    idx, g = idx[ok], g[ok]
    order = np.argsort(inp.time, kind="stable")
    t_sorted = inp.time[order]
    s_sorted = surv[order]
    num = 0.0
    den = 0.0
    for i, gi in zip(idx, g):
        later = s_sorted[np.searchsorted(t_sorted, inp.time[i], side="right"):]
        if len(later) == 0:
            continue
        w = 1.0 / (gi * gi)
        conc = np.count_nonzero(surv[i] < later) + 0.5 * np.count_nonzero(surv[i] == later)
        num += w * conc
        den += w * len(later)
    return num / den if den > 0 else math.nan


def ipcw_brier(inp: EvalInput, G: StepFunction | None = None, return_dropped: bool = False):
    """Graf IPCW Brier score at the horizon.

    Events by the horizon contribute S^2 / G(T_i-); subjects known alive at the
    horizon contribute (1 - S)^2 / G(v-); subjects censored earlier contribute
    0.  Subjects whose weight would divide by zero are dropped and counted.
    """
    G = censoring_km(inp.time, inp.event) if G is None else G
    v = inp.horizon
    S = inp.survival
    died = inp.event & (inp.time <= v)
    alive = (inp.time > v) | ((inp.time == v) & ~inp.event)
    g_event = np.where(died, G.left_limit(np.where(died, inp.time, 0.0)), 1.0)
    g_v = G.left_limit(v)
    drop = (died & (g_event <= 0)) | (alive & (g_v <= 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(died & ~drop, S**2 / g_event, 0.0)
        contrib += np.where(alive & ~drop, (1.0 - S) ** 2 / g_v if g_v > 0 else 0.0, 0.0)
    n = len(S) - int(drop.sum())
    score = float(contrib.sum() / n) if n else math.nan
    return (score, int(drop.sum())) if return_dropped else score


def _poisson_offset_fit(d, offset, z, max_iter=50, tol=1e-10):
    """MLE of (a, b) in d ~ Poisson(exp(a + b z + offset))."""
    Z = np.column_stack([np.ones_like(z), z])
    # start from the intercept-only closed form
    theta = np.array([math.log(max(d.sum(), 1e-300) / np.exp(offset).sum()), 0.0])
    for _ in range(max_iter):
        mu = np.exp(Z @ theta + offset)
        grad = Z.T @ (d - mu)
        hess = (Z * mu[:, None]).T @ Z
        step = np.linalg.solve(hess, grad)
        theta = theta + step
        if np.max(np.abs(step)) < tol:
            break
    return theta


def calibration(inp: EvalInput, return_clamped: bool = False):
    """Calibration intercept and slope via Poisson regression with offsets.

    With s_i = min(T_i, v) and d_i the event-by-s_i indicator, the intercept
    is log(sum d_i / sum H_i(s_i)) and the slope is b in
    d_i ~ exp(a + b eta_i) H_0(s_i).  Zero cumulative hazards are clamped at
    1e-10.
    """
    if inp.cumhaz is None or inp.baseline_cumhaz is None or inp.lp is None:
        raise ValueError("calibration needs cumulative hazard accessors and linear predictors")
    s = np.minimum(inp.time, inp.horizon)
    d = (inp.event & (inp.time <= inp.horizon)).astype(float)
    H = np.asarray(inp.cumhaz(s), dtype=float)
    H0 = np.asarray(inp.baseline_cumhaz(s), dtype=float)
    clamped = int(np.count_nonzero(H < CLAMP) + np.count_nonzero(H0 < CLAMP))
    H = np.maximum(H, CLAMP)
    H0 = np.maximum(H0, CLAMP)
    if d.sum() == 0:
        intercept, slope = -math.inf, math.nan
    else:
        intercept = math.log(d.sum() / H.sum())
        slope = float(_poisson_offset_fit(d, np.log(H0), np.asarray(inp.lp, dtype=float))[1])
    return ((intercept, slope), clamped) if return_clamped else (intercept, slope)


def eval_input(model, data: Dataset, horizon: float, n_draws: int = 1000, seed: int = 0) -> EvalInput:
    """Predictions of ``model`` on ``data`` at ``horizon`` plus calibration accessors.

    Columns of ``data`` outside the model's spec are ignored.  For a Bayesian
    model, survival is the posterior predictive average over ``n_draws``
    Gaussian draws (seeded), and the slope uses the plug-in baseline.
    """
    X = data.design(model.spec)
    if isinstance(model, CoxModel):
        lp = X @ model.beta
        rel = np.exp(lp)
        H0 = model.baseline_cum_hazard
        return EvalInput(
            np.exp(-H0(horizon) * rel), data.time, data.event, horizon, lp,
            cumhaz=lambda s: H0(s) * rel,
            baseline_cumhaz=lambda s: H0(s),
            ids=data.ids,
        )
    if isinstance(model, BayesPHModel):
        theta = posterior_draws(model, n_draws, seed)
        rate = np.exp(theta[:, 0][None, :] + X @ theta[:, 1:].T)  # (n, draws)

        def predictive(t):
            return np.exp(-rate * np.asarray(t, dtype=float).reshape(-1, 1)).mean(axis=1)

        lam = math.exp(model.point_estimates[0])
        lp = X @ model.beta
        surv = predictive(np.full(len(data), horizon))

        def cumhaz(s):
            # most subjects are followed to the horizon; reuse those predictions
            s = np.asarray(s, dtype=float)
            S = surv.copy()
            early = s != horizon
            if early.any():
                S[early] = np.exp(-rate[early] * s[early, None]).mean(axis=1)
            return -np.log(np.maximum(S, 1e-300))

        return EvalInput(
            surv, data.time, data.event, horizon, lp,
            cumhaz=cumhaz,
            baseline_cumhaz=lambda s: lam * np.asarray(s, dtype=float),
            ids=data.ids,
        )
    raise TypeError(f"cannot evaluate {type(model).__name__}")


def evaluate(model, data: Dataset, horizon: float, *, period: int | None = None,
             strategy: str = "", n_draws: int = 1000, seed: int = 0) -> MetricReport:
    inp = eval_input(model, data, horizon, n_draws, seed)
    G = censoring_km(inp.time, inp.event)
    brier, dropped = ipcw_brier(inp, G, return_dropped=True)
    (a, b), clamped = calibration(inp, return_clamped=True)
    return MetricReport(
        c_index=ipcw_cindex(inp, G),
        brier=brier,
        cal_intercept=a,
        cal_slope=b,
        n=len(data),
        n_events=int((data.event & (data.time <= horizon)).sum()),
        period=data.period if period is None else period,
        strategy=strategy,
        notes={"brier_dropped": dropped, "clamped": clamped},
    )
