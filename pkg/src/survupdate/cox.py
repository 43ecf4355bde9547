"""Cox proportional hazards fitting with the Breslow baseline hazard."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CoxModel,
    Dataset,
    DegenerateCovariate,
    DimensionError,
    InsufficientEvents,
    NoEvents,
    NonConvergence,
    StepFunction,
)


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 100
    tol: float = 1e-9
    ridge_eps: float = 1e-10
    max_halvings: int = 10
    beta_bound: float = 50.0
    # a standard error this large means the likelihood is monotone in that direction
    se_bound: float = 1e3

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.ridge_eps < 0:
            raise ValueError("ridge_eps must be non-negative")


class _RiskSets:
    """Time-sorted view of a dataset with the Breslow risk-set bookkeeping."""

    def __init__(self, time, event, X):
        order = np.argsort(time, kind="stable")
        self.time = np.asarray(time)[order]
        self.event = np.asarray(event, dtype=bool)[order]
        self.X = np.asarray(X, dtype=float)[order]
        self.event_times, self.d = np.unique(self.time[self.event], return_counts=True)
        # risk set at t_k is every record with time >= t_k
        self.first = np.searchsorted(self.time, self.event_times, side="left")
        self.x_event_sum = self.X[self.event].sum(axis=0)

    def _weights(self, beta):
        eta = self.X @ beta
        shift = eta.max() if len(eta) else 0.0
        return eta, np.exp(eta - shift), shift

    def loglik(self, beta) -> float:
        eta, w, shift = self._weights(beta)
        s0 = np.cumsum(w[::-1])[::-1][self.first]
        return float(eta[self.event].sum() - np.sum(self.d * (np.log(s0) + shift)))

    def derivatives(self, beta):
        """Log partial likelihood, score and observed information."""
        eta, w, shift = self._weights(beta)
        X = self.X
        s0 = np.cumsum(w[::-1])[::-1][self.first]
        s1 = np.cumsum((w[:, None] * X)[::-1], axis=0)[::-1][self.first]
        s2 = np.cumsum((w[:, None, None] * X[:, :, None] * X[:, None, :])[::-1], axis=0)[::-1][self.first]
        ll = float(eta[self.event].sum() - np.sum(self.d * (np.log(s0) + shift)))
        xbar = s1 / s0[:, None]
        score = self.x_event_sum - (self.d[:, None] * xbar).sum(axis=0)
        info = np.einsum("k,kij->ij", self.d / s0, s2) - np.einsum("k,ki,kj->ij", self.d, xbar, xbar)
        return ll, score, info


def _solve(info, score, ridge_eps):
    try:
        np.linalg.cholesky(info)
        return np.linalg.solve(info, score)
    except np.linalg.LinAlgError:
        eps = max(ridge_eps, 1e-12) * max(1.0, float(np.abs(np.diag(info)).max(initial=0.0)))
        return np.linalg.solve(info + eps * np.eye(len(score)), score)


def check_fittable(data: Dataset) -> None:
    if data.n_events == 0:
        raise NoEvents(f"period {data.period}: no events")
    for j, name in enumerate(data.spec.names):
        col = data.X[:, j]
        if col.min() == col.max():
            raise DegenerateCovariate(f"covariate {name!r} is constant")
    if data.n_events < len(data.spec):
        raise InsufficientEvents(f"{data.n_events} events for {len(data.spec)} covariates")


def fit_cox(data: Dataset, opts: FitOptions = FitOptions()) -> CoxModel:
    """Maximise the Breslow partial likelihood by damped Newton-Raphson.

    Raises one of the :class:`~survupdate.core.FitError` subclasses when the
    data cannot support a fit.
    """
    check_fittable(data)
    p = len(data.spec)
    # centring leaves the partial likelihood unchanged and keeps exp() tame
    centre = data.X.mean(axis=0)
    rs = _RiskSets(data.time, data.event, data.X - centre)
    beta = np.zeros(p)
    ll, score, info = rs.derivatives(beta)
    for _ in range(opts.max_iter):
        if np.max(np.abs(score), initial=0.0) < opts.tol:
            break
        step = _solve(info, score, opts.ridge_eps)
        for _ in range(opts.max_halvings + 1):
            cand = beta + step
            ll_new = rs.loglik(cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        else:
            raise NonConvergence("step halving failed to increase the partial likelihood")
        beta = cand
        if np.any(np.abs(beta) > opts.beta_bound):
            raise NonConvergence(f"|beta| exceeded {opts.beta_bound}: monotone likelihood")
        ll, score, info = rs.derivatives(beta)
    else:
        if np.max(np.abs(score), initial=0.0) >= opts.tol:
            raise NonConvergence(f"no convergence after {opts.max_iter} iterations")
    try:
        cov = np.linalg.inv(info) if p else np.zeros((0, 0))
    except np.linalg.LinAlgError:
        raise NonConvergence("singular information matrix") from None
    se = np.sqrt(np.diag(cov)) if p else np.zeros(0)
    if np.any(~np.isfinite(se)) or np.any(se <= 0) or np.any(se > opts.se_bound):
        raise NonConvergence("unbounded standard error: monotone likelihood")
    return CoxModel(data.spec, beta, se, breslow_cum_hazard(beta, data), data.period)


def breslow_cum_hazard(beta, data: Dataset) -> StepFunction:
    """Breslow cumulative baseline hazard at ``beta``.

    The increment at event time t_k is d_k / sum_{j: T_j >= t_k} exp(beta'X_j).
    With all records censored the zero function is returned with ``flagged`` set.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (len(data.spec),):
        raise DimensionError(f"beta has length {beta.size}, data has {len(data.spec)} covariates")
    if data.n_events == 0:
        return StepFunction(np.zeros(0), np.zeros(0), flagged=True)
    rs = _RiskSets(data.time, data.event, data.X)
    _, w, shift = rs._weights(beta)
    s0 = np.cumsum(w[::-1])[::-1][rs.first]
    increments = rs.d / s0 * np.exp(-shift)
    return StepFunction(rs.event_times, np.cumsum(increments))


def linear_predictor(model: CoxModel, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (len(model.spec),):
        raise DimensionError(f"expected {len(model.spec)} covariates, got shape {x.shape}")
    out = x @ model.beta
    return float(out) if np.ndim(out) == 0 else out


def predict_survival(model: CoxModel, x, t):
    """S(t | x) = exp(-H0(t) exp(beta'x)), with t measured from the model's time origin."""
    eta = linear_predictor(model, x)
    return np.exp(-model.baseline_cum_hazard(t) * np.exp(eta))
