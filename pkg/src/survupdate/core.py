"""Shared survival data types, step functions and file formats."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

CUMHAZ = "cumhaz"
SURVIVAL = "survival"


class SurvivalError(Exception):
    """Base class for errors raised by this package."""


class DomainError(SurvivalError, ValueError):
    pass


class DimensionError(SurvivalError, ValueError):
    pass


class FitError(SurvivalError):
    """A model could not be fitted; the updating harness retains the previous model."""


class NoEvents(FitError):
    pass


class DegenerateCovariate(FitError):
    pass


class InsufficientEvents(FitError):
    pass


class NonConvergence(FitError):
    pass


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CovariateSpec:
    names: tuple[str, ...]
    kinds: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "kinds", tuple(self.kinds))
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate covariate names in {self.names}")
        if len(self.names) != len(self.kinds):
            raise ValueError("names and kinds must have the same length")
        bad = set(self.kinds) - {"continuous", "binary"}
        if bad:
            raise ValueError(f"unknown covariate kinds {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def subset(self, names: Sequence[str]) -> CovariateSpec:
        return CovariateSpec(tuple(names), tuple(self.kinds[self.index(n)] for n in names))

    def covers(self, other: CovariateSpec) -> bool:
        return set(other.names) <= set(self.names)

    def to_dict(self) -> dict:
        return {"names": list(self.names), "kinds": list(self.kinds)}

    @classmethod
    def from_dict(cls, d: dict) -> CovariateSpec:
        return cls(tuple(d["names"]), tuple(d["kinds"]))


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    covariates: tuple[float, ...]
    time_observed: float
    event: bool
    entry_period: int = 0


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented batch of survival records observed in one period.

    Times are in years from each record's own time origin.
    """

    spec: CovariateSpec
    ids: np.ndarray
    time: np.ndarray
    event: np.ndarray
    X: np.ndarray
    period: int = 0
    entry_period: np.ndarray | None = None

    def __post_init__(self):
        time = _frozen(self.time)
        event = _frozen(self.event, bool)
        X = _frozen(np.reshape(self.X, (len(time), len(self.spec))))
        ids = np.asarray(self.ids).astype(str)
        ids.setflags(write=False)
        if self.entry_period is None:
            entry = _frozen(np.full(len(time), self.period), int)
        else:
            entry = _frozen(self.entry_period, int)
        if not (len(ids) == len(event) == len(time) == len(entry)):
            raise DimensionError("ids, time, event and entry_period lengths differ")
        if time.ndim != 1 or not np.all(np.isfinite(time)) or np.any(time < 0):
            raise DomainError("observed times must be finite and non-negative")
        if not np.all(np.isfinite(X)):
            raise DomainError("covariates must be finite")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "entry_period", entry)

    def __len__(self) -> int:
        return len(self.time)

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    @property
    def records(self) -> list[SubjectRecord]:
        return list(self)

    def __iter__(self) -> Iterator[SubjectRecord]:
        for k in range(len(self)):
            yield SubjectRecord(
                str(self.ids[k]),
                tuple(float(v) for v in self.X[k]),
                float(self.time[k]),
                bool(self.event[k]),
                int(self.entry_period[k]),
            )

    @classmethod
    def from_records(cls, spec: CovariateSpec, records: Sequence[SubjectRecord],
                     period: int = 0) -> Dataset:
        for r in records:
            if len(r.covariates) != len(spec):
                raise DimensionError(f"record {r.id} has {len(r.covariates)} covariates, "
                                     f"spec has {len(spec)}")
        return cls(
            spec,
            [r.id for r in records],
            [r.time_observed for r in records],
            [r.event for r in records],
            np.array([r.covariates for r in records], dtype=float).reshape(len(records), len(spec)),
            period,
            [r.entry_period for r in records],
        )

    def design(self, spec: CovariateSpec) -> np.ndarray:
        """Covariate matrix for ``spec``'s columns, taken by name."""
        if not set(spec.names) <= set(self.spec.names):
            missing = sorted(set(spec.names) - set(self.spec.names))
            raise DimensionError(f"dataset lacks covariates {missing}")
        cols = [self.spec.index(n) for n in spec.names]
        return self.X[:, cols]

    def select(self, names: Sequence[str]) -> Dataset:
        spec = self.spec.subset(names)
        return Dataset(spec, self.ids, self.time, self.event, self.design(spec),
                       self.period, self.entry_period)

    def subset(self, mask) -> Dataset:
        return Dataset(self.spec, self.ids[mask], self.time[mask], self.event[mask],
                       self.X[mask], self.period, self.entry_period[mask])

    def concat(self, other: Dataset) -> Dataset:
        if other.spec != self.spec:
            raise DimensionError("cannot concatenate datasets with different specs")
        return Dataset(
            self.spec,
            np.concatenate([self.ids, other.ids]),
            np.concatenate([self.time, other.time]),
            np.concatenate([self.event, other.event]),
            np.vstack([self.X, other.X]),
            self.period,
            np.concatenate([self.entry_period, other.entry_period]),
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "time", "event", *self.spec.names])
            for k in range(len(self)):
                w.writerow([self.ids[k], repr(float(self.time[k])), int(self.event[k]),
                            *(repr(float(v)) for v in self.X[k])])

    @classmethod
    def from_csv(cls, path, kinds: Sequence[str] | None = None, period: int = 0) -> Dataset:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[:3] != ["id", "time", "event"]:
            raise ValueError(f"{path}: header must start with id,time,event")
        names = header[3:]
        X = np.array([[float(v) for v in r[3:]] for r in body], dtype=float).reshape(len(body), len(names))
        if kinds is None:
            kinds = ["binary" if np.isin(X[:, j], (0.0, 1.0)).all() else "continuous"
                     for j in range(len(names))]
        return cls(
            CovariateSpec(tuple(names), tuple(kinds)),
            [r[0] for r in body],
            [float(r[1]) for r in body],
            [bool(int(r[2])) for r in body],
            X,
            period,
        )


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous piecewise-constant function of time.

    ``values[k]`` holds on ``[knots[k], knots[k+1])``.  Before the first knot
    the function is 0 for cumulative hazards and 1 for survival curves.
    """

    knots: np.ndarray
    values: np.ndarray
    role: str = CUMHAZ
    flagged: bool = False

    def __post_init__(self):
        knots = _frozen(self.knots)
        values = _frozen(self.values)
        if knots.shape != values.shape or knots.ndim != 1:
            raise DimensionError("knots and values must be 1-d arrays of equal length")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if self.role == CUMHAZ:
            if np.any(values < 0) or np.any(np.diff(values) < 0):
                raise ValueError("cumulative hazard must be non-negative and non-decreasing")
        elif self.role == SURVIVAL:
            if np.any(values < 0) or np.any(values > 1) or np.any(np.diff(values) > 0):
                raise ValueError("survival function must be non-increasing in [0, 1]")
        else:
            raise ValueError(f"unknown role {self.role!r}")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @property
    def initial(self) -> float:
        return 0.0 if self.role == CUMHAZ else 1.0

    def __call__(self, t):
        return step_eval(self, t)

    def left_limit(self, t):
        """Value just before ``t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="left") - 1
        vals = np.concatenate([[self.initial], self.values])
        out = vals[idx + 1]
        return float(out) if out.ndim == 0 else out

    def scaled(self, factor: float) -> StepFunction:
        return StepFunction(self.knots, self.values * factor, self.role, self.flagged)

    def to_dict(self) -> dict:
        return {"knots": self.knots.tolist(), "values": self.values.tolist(),
                "role": self.role, "flagged": self.flagged}

    @classmethod
    def from_dict(cls, d: dict) -> StepFunction:
        return cls(np.array(d["knots"], dtype=float), np.array(d["values"], dtype=float),
                   d["role"], d.get("flagged", False))


def step_eval(f: StepFunction, t):
    """Evaluate a right-continuous step function at ``t`` (scalar or array)."""
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise DomainError("step functions are defined for finite t >= 0")
    idx = np.searchsorted(f.knots, t, side="right") - 1
    vals = np.concatenate([[f.initial], f.values])
    out = vals[idx + 1]
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class CoxModel:
    spec: CovariateSpec
    beta: np.ndarray
    beta_se: np.ndarray
    baseline_cum_hazard: StepFunction
    fit_period: int = 0

    def __post_init__(self):
        beta = _frozen(self.beta)
        se = _frozen(self.beta_se)
        if not (len(beta) == len(se) == len(self.spec)):
            raise DimensionError("beta, beta_se and spec lengths differ")
        if np.any(~(se > 0)):
            raise ValueError("standard errors must be positive")
        if self.baseline_cum_hazard.role != CUMHAZ:
            raise ValueError("baseline must be a cumulative hazard")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "beta_se", se)

    def to_dict(self) -> dict:
        return {
            "type": "CoxModel",
            "spec": self.spec.to_dict(),
            "beta": self.beta.tolist(),
            "beta_se": self.beta_se.tolist(),
            "baseline_cum_hazard": self.baseline_cum_hazard.to_dict(),
            "fit_period": self.fit_period,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CoxModel:
        return cls(CovariateSpec.from_dict(d["spec"]), np.array(d["beta"], dtype=float),
                   np.array(d["beta_se"], dtype=float),
                   StepFunction.from_dict(d["baseline_cum_hazard"]), d["fit_period"])


@dataclass(frozen=True, eq=False)
class BayesPHModel:
    """Gaussian posterior summary for an exponential-baseline PH model.

    Coordinates are ``(log_lambda, beta_1, ..., beta_p)``.
    """

    spec: CovariateSpec
    mode: np.ndarray
    covariance: np.ndarray
    point_estimates: np.ndarray
    fit_period: int = 0
    forgetting: float = 0.9

    def __post_init__(self):
        mode = _frozen(self.mode)
        cov = _frozen(self.covariance)
        pe = _frozen(self.point_estimates)
        k = len(self.spec) + 1
        if mode.shape != (k,) or pe.shape != (k,) or cov.shape != (k, k):
            raise DimensionError(f"expected {k} coordinates (log_lambda + covariates)")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=0):
            raise ValueError("covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("covariance must be positive definite")
        if not 0 < self.forgetting <= 1:
            raise ValueError("forgetting factor must lie in (0, 1]")
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "point_estimates", pe)

    @property
    def coordinate_names(self) -> tuple[str, ...]:
        return ("log_lambda", *self.spec.names)

    @property
    def beta(self) -> np.ndarray:
        return self.point_estimates[1:]

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def to_dict(self) -> dict:
        return {
            "type": "BayesPHModel",
            "spec": self.spec.to_dict(),
            "mode": self.mode.tolist(),
            "covariance": self.covariance.tolist(),
            "point_estimates": self.point_estimates.tolist(),
            "fit_period": self.fit_period,
            "forgetting": self.forgetting,
        }

    @classmethod
    def from_dict(cls, d: dict) -> BayesPHModel:
        return cls(CovariateSpec.from_dict(d["spec"]), np.array(d["mode"], dtype=float),
                   np.array(d["covariance"], dtype=float),
                   np.array(d["point_estimates"], dtype=float), d["fit_period"], d["forgetting"])


@dataclass(frozen=True)
class SurvivalPrediction:
    subject_id: str
    horizon: float
    survival_prob: float
    linear_predictor: float

    def __post_init__(self):
        if not 0.0 <= self.survival_prob <= 1.0:
            raise DomainError("survival probability must lie in [0, 1]")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")


_MODEL_TYPES = {"CoxModel": CoxModel, "BayesPHModel": BayesPHModel}


def save_model(model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2)


def model_from_dict(d: dict):
    try:
        cls = _MODEL_TYPES[d["type"]]
    except KeyError:
        raise ValueError(f"unknown model type {d.get('type')!r}") from None
    return cls.from_dict(d)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
