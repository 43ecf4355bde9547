import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from survupdate.core import (
    SURVIVAL, BayesPHModel, CovariateSpec, CoxModel, Dataset, DimensionError, DomainError,
    StepFunction, SurvivalPrediction, load_model, save_model, step_eval,
)
from conftest import make_data


def test_step_eval_examples():
    assert step_eval(StepFunction([], []), 5) == 0
    f = StepFunction([1, 2], [0.3, 0.7])
    assert step_eval(f, 1.5) == 0.3
    assert step_eval(f, 2) == 0.7
    assert step_eval(f, 0.5) == 0.0
    assert f.left_limit(2) == 0.3
    assert f.left_limit(1) == 0.0


def test_survival_role_starts_at_one():
    g = StepFunction([1.0], [0.5], role=SURVIVAL)
    assert g(0.0) == 1.0 and g(1.0) == 0.5 and g.left_limit(1.0) == 1.0


def test_step_eval_rejects_negative_time():
    with pytest.raises(DomainError):
        step_eval(StepFunction([1], [0.2]), -0.1)


def test_step_function_invariants():
    with pytest.raises(ValueError):
        StepFunction([1, 1], [0.1, 0.2])
    with pytest.raises(ValueError):
        StepFunction([1, 2], [0.3, 0.2])
    with pytest.raises(ValueError):
        StepFunction([1, 2], [0.5, 0.7], role=SURVIVAL)


@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=20, unique=True),
       st.lists(st.floats(0, 5), min_size=20, max_size=20),
       st.floats(0, 200), st.floats(0, 200))
def test_cumhaz_monotone(knots, incs, t1, t2):
    knots = np.sort(knots)
    f = StepFunction(knots, np.cumsum(incs[: len(knots)]))
    lo, hi = min(t1, t2), max(t1, t2)
    assert f(lo) <= f(hi)


def test_covariate_spec_invariants():
    with pytest.raises(ValueError):
        CovariateSpec(("a", "a"), ("binary", "binary"))
    with pytest.raises(ValueError):
        CovariateSpec(("a",), ("binary", "continuous"))
    spec = CovariateSpec(("a", "b"), ("binary", "continuous"))
    assert spec.subset(["b"]).kinds == ("continuous",)


def test_dataset_validation():
    with pytest.raises(DomainError):
        make_data([-1.0], [True])
    with pytest.raises(DomainError):
        make_data([np.inf], [True])
    with pytest.raises(DimensionError):
        Dataset(CovariateSpec(("a",), ("binary",)), ["1", "2"], [1.0], [True], [[0.0]])
    d = make_data([1.0, 2.0], [True, False], [[0.0], [1.0]])
    with pytest.raises(ValueError):
        d.time[0] = 3.0  # immutable after construction


def test_dataset_records_round_trip():
    d = make_data([1.0, 2.5], [True, False], [[0.0, 1.5], [1.0, -2.0]], period=3)
    back = Dataset.from_records(d.spec, d.records, d.period)
    np.testing.assert_array_equal(back.X, d.X)
    np.testing.assert_array_equal(back.time, d.time)
    assert back.period == 3 and back.n_events == 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1e3, allow_subnormal=False), st.booleans(),
                          st.floats(-1e6, 1e6, allow_subnormal=False)), min_size=1, max_size=15))
def test_dataset_csv_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "d.csv"
    d = make_data([r[0] for r in rows], [r[1] for r in rows], [[r[2]] for r in rows], names=["z"])
    d.to_csv(path)
    back = Dataset.from_csv(path, kinds=d.spec.kinds)
    assert back.spec == d.spec
    np.testing.assert_array_equal(back.time, d.time)
    np.testing.assert_array_equal(back.event, d.event)
    np.testing.assert_array_equal(back.X, d.X)
    np.testing.assert_array_equal(back.ids, d.ids)


def test_dataset_design_selects_by_name():
    d = make_data([1.0, 2.0], [1, 0], [[1, 2], [3, 4]], names=["a", "b"])
    spec = CovariateSpec(("b",), ("continuous",))
    np.testing.assert_array_equal(d.design(spec), [[2.0], [4.0]])
    with pytest.raises(DimensionError):
        d.design(CovariateSpec(("c",), ("binary",)))


finite = st.floats(-10, 10, allow_nan=False, allow_subnormal=False)


@settings(max_examples=40, deadline=None)
@given(st.lists(finite, min_size=1, max_size=4), st.lists(st.floats(0.01, 5), min_size=4, max_size=4),
       st.lists(st.floats(0.001, 3), min_size=1, max_size=6))
def test_cox_model_file_round_trip_is_bitwise(tmp_path_factory, beta, se, incs):
    p = len(beta)
    spec = CovariateSpec(tuple(f"v{j}" for j in range(p)), ("continuous",) * p)
    knots = np.cumsum(incs)
    m = CoxModel(spec, np.array(beta), np.array(se[:p]), StepFunction(knots, np.cumsum(incs)), 2)
    path = tmp_path_factory.mktemp("m") / "cox.json"
    save_model(m, path)
    back = load_model(path)
    assert isinstance(back, CoxModel) and back.spec == spec and back.fit_period == 2
    assert back.beta.tobytes() == m.beta.tobytes()
    assert back.beta_se.tobytes() == m.beta_se.tobytes()
    assert back.baseline_cum_hazard.knots.tobytes() == m.baseline_cum_hazard.knots.tobytes()
    assert back.baseline_cum_hazard.values.tobytes() == m.baseline_cum_hazard.values.tobytes()


@settings(max_examples=40, deadline=None)
@given(st.lists(finite, min_size=2, max_size=4), st.floats(0.01, 1.0),
       st.integers(0, 2**32 - 1))
def test_bayes_model_file_round_trip_is_bitwise(tmp_path_factory, mode, xi, seed):
    k = len(mode)
    spec = CovariateSpec(tuple(f"v{j}" for j in range(k - 1)), ("binary",) * (k - 1))
    A = np.random.default_rng(seed).standard_normal((k, k))
    cov = A @ A.T + 0.1 * np.eye(k)
    m = BayesPHModel(spec, np.array(mode), cov, np.array(mode), 4, xi)
    path = tmp_path_factory.mktemp("m") / "bayes.json"
    save_model(m, path)
    back = load_model(path)
    assert isinstance(back, BayesPHModel) and back.forgetting == xi
    for a in ("mode", "covariance", "point_estimates"):
        assert getattr(back, a).tobytes() == getattr(m, a).tobytes()


def test_model_invariants():
    spec = CovariateSpec(("a",), ("binary",))
    with pytest.raises(ValueError):
        CoxModel(spec, [0.1], [0.0], StepFunction([], []))
    with pytest.raises(DimensionError):
        CoxModel(spec, [0.1, 0.2], [0.1, 0.1], StepFunction([], []))
    with pytest.raises(ValueError):
        BayesPHModel(spec, [0, 0], [[1, 0], [0, -1]], [0, 0])
    with pytest.raises(ValueError):
        BayesPHModel(spec, [0, 0], np.eye(2), [0, 0], forgetting=0.0)


def test_survival_prediction_bounds():
    SurvivalPrediction("a", 0.25, 0.9, 0.1)
    with pytest.raises(DomainError):
        SurvivalPrediction("a", 0.25, 1.1, 0.1)
    with pytest.raises(DomainError):
        SurvivalPrediction("a", 0.0, 0.5, 0.1)
