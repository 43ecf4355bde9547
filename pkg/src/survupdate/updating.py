"""Model updating strategies: no update, intercept recalibration, refit, Bayesian."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np

from .bayes import GaussianPrior, map_laplace
from .core import BayesPHModel, CoxModel, Dataset, FitError, NoEvents, SurvivalError
from .cox import FitOptions, breslow_cum_hazard, fit_cox

NEW_COEF_PRIOR_SD = 2.5
DEFAULT_FORGETTING = 0.9

KINDS = (
    "no_update",
    "recalibrate_once",
    "recalibrate_quarterly",
    "refit_once",
    "refit_quarterly",
    "bayes_quarterly",
)

Model = Union[CoxModel, BayesPHModel]


class SeedingError(SurvivalError):
    pass


@dataclass(frozen=True)
class UpdateStrategy:
    kind: str
    at: float | None = None
    forgetting: float = DEFAULT_FORGETTING
    window: float = 0.25

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind.endswith("_once"):
            if self.at is None or not 0 <= self.at < 1:
                raise ValueError("one-time strategies need an update time in [0, 1)")
        elif self.at is not None:
            raise ValueError(f"{self.kind} does not take an update time")
        if not 0 < self.forgetting <= 1:
            raise ValueError("forgetting factor must lie in (0, 1]")
        if not self.window > 0:
            raise ValueError("window must be positive")

    @property
    def name(self) -> str:
        if self.at is not None:
            return f"{self.kind}@{self.at:g}"
        if self.kind == "bayes_quarterly" and self.forgetting != DEFAULT_FORGETTING:
            return f"{self.kind}(xi={self.forgetting:g})"
        return self.kind

    @property
    def quarterly(self) -> bool:
        return self.kind.endswith("_quarterly")

    @classmethod
    def parse(cls, text: str) -> UpdateStrategy:
        """Inverse of :attr:`name`, e.g. ``refit_once@0.46`` or ``bayes_quarterly(xi=0.95)``."""
        text = text.strip()
        if "@" in text:
            kind, at = text.split("@", 1)
            return cls(kind, float(at))
        if text.startswith("bayes_quarterly(xi="):
            return cls("bayes_quarterly", forgetting=float(text[len("bayes_quarterly(xi="):-1]))
        return cls(text)


@dataclass(frozen=True)
class ModelState:
    """A model plus its updating provenance."""

    model: Model
    strategy: str = "no_update"
    update_count: int = 0
    retained_previous: bool = False

    @property
    def is_bayes(self) -> bool:
        return isinstance(self.model, BayesPHModel)

    @property
    def coefficients(self) -> dict[str, float]:
        m = self.model
        return dict(zip(m.spec.names, (float(b) for b in m.beta)))


def no_update(state: ModelState, data: Dataset | None = None) -> ModelState:
    return state


def recalibrate_intercept(model: CoxModel, data: Dataset, horizon: float | None = None) -> CoxModel:
    """Re-estimate the baseline hazard on ``data`` with the log hazard ratios held fixed.

    Fixing the coefficient of the linear predictor at 1 makes it an offset, so
    the new baseline is the Breslow estimator at the old ``beta``.  The whole
    step function is kept; predictions read it at ``horizon``.
    """
    if horizon is not None and not horizon > 0:
        raise ValueError("horizon must be positive")
    local = data.select(model.spec.names)
    if local.n_events == 0:
        raise NoEvents(f"period {data.period}: nothing to recalibrate on")
    return CoxModel(model.spec, model.beta, model.beta_se,
                    breslow_cum_hazard(model.beta, local), data.period)


def refit(data: Dataset, opts: FitOptions, previous: ModelState,
          covariates: Sequence[str] | None = None) -> ModelState:
    """Fit a fresh Cox model to ``data`` only, or keep ``previous`` if that fails."""
    local = data if covariates is None else data.select(covariates)
    try:
        model = fit_cox(local, opts)
    except FitError:
        return replace(previous, retained_previous=True)
    return ModelState(model, previous.strategy, previous.update_count + 1, False)


def bayes_update(model: BayesPHModel, data: Dataset, new_covariates: Sequence[str] | None = None,
                 opts: FitOptions = FitOptions(), forgetting: float | None = None) -> BayesPHModel:
    """One Bayesian update with a forgetting factor.

    Existing coordinates (including ``log_lambda``) get the prior
    N(estimate, sd^2 / xi) from ``model``; each new covariate gets N(0, 2.5).
    ``new_covariates`` defaults to every column of ``data`` absent from ``model``.
    """
    xi = model.forgetting if forgetting is None else forgetting
    if not 0 < xi <= 1:
        raise ValueError("forgetting factor must lie in (0, 1]")
    if new_covariates is None:
        new_covariates = [n for n in data.spec.names if n not in model.spec.names]
    new_covariates = list(new_covariates)
    clash = set(new_covariates) & set(model.spec.names)
    if clash:
        raise ValueError(f"covariates {sorted(clash)} are already in the model")
    names = [*model.spec.names, *new_covariates]
    local = data.select(names)
    k_new = len(new_covariates)
    prior = GaussianPrior(
        np.concatenate([model.point_estimates, np.zeros(k_new)]),
        np.concatenate([model.sd / np.sqrt(xi), np.full(k_new, NEW_COEF_PRIOR_SD)]),
    )
    return map_laplace(local, prior, opts, fit_period=data.period, forgetting=xi)


def seed_bayes_from_cox(model: CoxModel, lambda_prior: GaussianPrior | None = None,
                        forgetting: float = DEFAULT_FORGETTING) -> BayesPHModel:
    """Turn a fitted Cox model into the starting point for Bayesian updating.

    The coefficients keep the Cox estimates and standard errors; ``log_lambda``
    takes ``lambda_prior`` (default N(0, 2.5)).  The forgetting factor is
    applied by the first :func:`bayes_update`, not here.
    """
    if lambda_prior is None:
        lambda_prior = GaussianPrior([0.0], [NEW_COEF_PRIOR_SD])
    if len(lambda_prior) != 1:
        raise ValueError("lambda_prior must be one-dimensional")
    se = np.asarray(model.beta_se, dtype=float)
    if se.shape != model.beta.shape or np.any(~(se > 0)):
        raise SeedingError("Cox model has no usable standard errors")
    mode = np.concatenate([lambda_prior.mean, model.beta])
    cov = np.diag(np.concatenate([lambda_prior.sd, se]) ** 2)
    return BayesPHModel(model.spec, mode, cov, mode.copy(), model.fit_period, forgetting)


def apply_update(state: ModelState, strategy: UpdateStrategy, data: Dataset,
                 covariates: Sequence[str] | None = None,
                 opts: FitOptions = FitOptions()) -> ModelState:
    """Update ``state`` with ``data`` according to ``strategy``.

    ``covariates`` lists the predictors available for this update; only refit
    and Bayesian updating can add predictors.  Failures keep the previous
    model with ``retained_previous`` set.
    """
    kind = strategy.kind
    state = replace(state, strategy=strategy.name, retained_previous=False)
    if kind == "no_update":
        return no_update(state, data)
    if kind.startswith("recalibrate"):
        if not isinstance(state.model, CoxModel):
            raise TypeError("recalibration needs a Cox model")
        try:
            model = recalibrate_intercept(state.model, data)
        except FitError:
            return replace(state, retained_previous=True)
        return ModelState(model, state.strategy, state.update_count + 1)
    if kind.startswith("refit"):
        return refit(data, opts, state, covariates)
    if kind == "bayes_quarterly":
        model = state.model
        if isinstance(model, CoxModel):
            model = seed_bayes_from_cox(model, forgetting=strategy.forgetting)
        new = [] if covariates is None else [c for c in covariates if c not in model.spec.names]
        try:
            updated = bayes_update(model, data, new, opts, strategy.forgetting)
        except (FitError, np.linalg.LinAlgError):
            return replace(state, retained_previous=True)
        return ModelState(updated, state.strategy, state.update_count + 1)
    raise AssertionError(kind)
