import math
import types

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from survupdate.bayes import GaussianPrior, posterior_predictive_survival
from survupdate.core import BayesPHModel, CovariateSpec, Dataset, NoEvents
from survupdate.cox import FitOptions, fit_cox, predict_survival
from survupdate.metrics import calibration, eval_input
from survupdate.updating import (
    KINDS, ModelState, SeedingError, UpdateStrategy, apply_update, bayes_update, no_update,
    recalibrate_intercept, refit, seed_bayes_from_cox,
)
from conftest import exp_data, make_data

BETA = np.array([0.5, -0.8])


@pytest.fixture(scope="module")
def cox0():
    return fit_cox(exp_data(10000, BETA, lam=0.3, censor=1.0, seed=1))


def offset_nelson_aalen(time, event, eta, t):
    """Sum over event times s <= t of d(s) / sum_{T_j >= s} exp(eta_j)."""
    total = 0.0
    for s in np.unique(time[event]):
        if s > t:
            break
        total += np.sum(event & (time == s)) / np.exp(eta[time >= s]).sum()
    return total


def test_no_update_is_identity(cox0):
    state = ModelState(cox0)
    d = exp_data(100, BETA, seed=2)
    out = no_update(state, d)
    assert out is state and no_update(out, d) is state and out.update_count == 0
    assert apply_update(state, UpdateStrategy("no_update"), d).model is cox0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_recalibration_preserves_ranks(cox0, seed):
    d = exp_data(300, BETA, lam=0.9, censor=0.25, seed=seed)
    new = recalibrate_intercept(cox0, d, 0.25)
    np.testing.assert_array_equal(new.beta, cox0.beta)
    x = np.random.default_rng(seed).standard_normal((40, 2))
    s_old = predict_survival(cox0, x, 0.25)
    s_new = predict_survival(new, x, 0.25)
    assert np.array_equal(np.sign(s_old[:, None] - s_old[None, :]), np.sign(s_new[:, None] - s_new[None, :]))


def test_recalibration_tracks_doubled_hazard(cox0):
    v = 0.25
    # twice the model's own baseline rate over [0, v]
    lam = 2 * cox0.baseline_cum_hazard(v) / v
    d = exp_data(20000, cox0.beta, lam=lam, censor=v, seed=3)
    new = recalibrate_intercept(cox0, d, v)
    eta = d.X @ cox0.beta
    assert new.baseline_cum_hazard(v) == pytest.approx(offset_nelson_aalen(d.time, d.event, eta, v), rel=1e-12)
    ratio = new.baseline_cum_hazard(v) / cox0.baseline_cum_hazard(v)
    # about 2500 events, so the ratio's sampling sd is near 0.04
    assert ratio == pytest.approx(2.0, abs=0.1)


def test_recalibrated_model_is_calibrated_on_fresh_data(cox0):
    train = exp_data(20000, cox0.beta, lam=0.6, censor=0.25, seed=4)
    new = recalibrate_intercept(cox0, train, 0.25)
    fresh = exp_data(20000, cox0.beta, lam=0.6, censor=0.25, seed=5)
    a, _ = calibration(eval_input(new, fresh, 0.25))
    assert abs(a) <= 0.05


def test_recalibration_errors(cox0):
    with pytest.raises(NoEvents):
        recalibrate_intercept(cox0, make_data([0.25] * 3, [0] * 3, np.zeros((3, 2))), 0.25)
    with pytest.raises(ValueError):
        recalibrate_intercept(cox0, exp_data(10, BETA), horizon=0.0)
    state = apply_update(ModelState(cox0), UpdateStrategy("recalibrate_quarterly"),
                         make_data([0.25] * 3, [0] * 3, np.zeros((3, 2))))
    assert state.retained_previous and state.model is cox0


def test_refit_reproduces_original_fit(cox0):
    d = exp_data(10000, BETA, lam=0.3, censor=1.0, seed=1)
    out = refit(d, FitOptions(), ModelState(cox0))
    np.testing.assert_allclose(out.model.beta, cox0.beta, atol=1e-6)
    assert out.update_count == 1 and not out.retained_previous


def test_refit_recovers_changed_beta(cox0):
    new_beta = np.array([-0.2, 0.4])
    d = exp_data(8000, new_beta, lam=0.5, censor=1.0, seed=6)
    out = refit(d, FitOptions(), ModelState(cox0))
    assert np.all(np.abs(out.model.beta - new_beta) < 3 * out.model.beta_se)
    assert no_update(ModelState(cox0), d).model.beta is cox0.beta


def test_refit_without_events_retains_previous(cox0):
    d = make_data(np.full(30, 0.25), np.zeros(30, bool), np.random.default_rng(0).standard_normal((30, 2)))
    out = refit(d, FitOptions(), ModelState(cox0, "refit_quarterly", 2))
    assert out.retained_previous and out.model is cox0 and out.update_count == 2


def _bayes(mode, sd, names=("a",)):
    spec = CovariateSpec(tuple(names), ("continuous",) * len(names))
    return BayesPHModel(spec, np.array(mode), np.diag(np.array(sd) ** 2), np.array(mode))


def test_bayes_empty_data_without_forgetting_returns_prior():
    m = _bayes([-1.0, 0.4], [0.3, 0.1])
    empty = make_data(np.zeros(0), np.zeros(0, bool), np.zeros((0, 1)), names=["a"])
    out = bayes_update(m, empty, [], forgetting=1.0)
    np.testing.assert_allclose(out.mode, m.mode, atol=1e-9)
    np.testing.assert_allclose(out.covariance, m.covariance, atol=1e-9)


def test_bayes_forgetting_inflates_prior_variance():
    m = _bayes([-1.0, 0.4], [0.3, 0.1])
    empty = make_data(np.zeros(0), np.zeros(0, bool), np.zeros((0, 1)), names=["a"])
    out = bayes_update(m, empty, [], forgetting=0.9)
    np.testing.assert_allclose(np.diag(out.covariance), np.array([0.3, 0.1]) ** 2 / 0.9, rtol=1e-9)


def test_bayes_successive_updates_shrink_sd():
    start = _bayes([math.log(0.3), 0.0], [2.5, 2.5], names=("x0",))
    d1 = exp_data(500, [0.5], lam=0.3, censor=1.0, seed=10)
    d2 = exp_data(500, [0.5], lam=0.3, censor=1.0, seed=11)
    one = bayes_update(start, d1, [], forgetting=0.9)
    two = bayes_update(one, d2, [], forgetting=0.9)
    assert np.all(two.sd < one.sd)


def test_bayes_never_treated_column_keeps_its_prior():
    start = _bayes([math.log(0.3), 0.5], [0.1, 0.05], names=("x0",))
    d = exp_data(2000, [0.5], lam=0.3, censor=1.0, seed=12)
    d = make_data(d.time, d.event, np.column_stack([d.X, np.zeros(len(d))]), names=["x0", "treated"])
    out = bayes_update(start, d, ["treated"])
    j = out.coordinate_names.index("treated")
    assert abs(out.mode[j]) < 0.01 * 2.5
    assert out.sd[j] == pytest.approx(2.5, rel=0.01)
    with pytest.raises(ValueError):
        bayes_update(out, d, ["treated"])


def test_seed_from_cox(cox0):
    b = seed_bayes_from_cox(cox0)
    assert b.spec == cox0.spec and b.coordinate_names == ("log_lambda", "x0", "x1")
    np.testing.assert_array_equal(b.beta, cox0.beta)
    np.testing.assert_allclose(b.sd[1:], cox0.beta_se)
    assert b.mode[0] == 0.0 and b.sd[0] == 2.5
    assert ModelState(b).update_count == 0
    with pytest.raises(SeedingError):
        seed_bayes_from_cox(types.SimpleNamespace(beta=cox0.beta, beta_se=None, spec=cox0.spec))
    with pytest.raises(ValueError):
        seed_bayes_from_cox(cox0, GaussianPrior([0.0, 0.0], [1.0, 1.0]))


def test_seed_then_update_agrees_with_cox_in_large_samples(cox0):
    # exponential DGP matching the Cox fit over the prediction window
    lam = cox0.baseline_cum_hazard(0.25) / 0.25
    d = exp_data(100000, cox0.beta, lam=lam, censor=1.0, seed=13)
    b = bayes_update(seed_bayes_from_cox(cox0), d, [])
    x = np.random.default_rng(1).standard_normal((20, 2))
    sb = posterior_predictive_survival(b, x, 0.25, n_draws=2000, seed=0)
    sc = predict_survival(cox0, x, 0.25)
    assert np.max(np.abs(sb - sc)) < 0.01


def test_updates_are_stable_without_drift(cox0):
    x_ref = np.array([0.5, 0.5])
    s0 = predict_survival(cox0, x_ref, 0.25)
    for kind in ("refit_quarterly", "bayes_quarterly"):
        state = ModelState(cox0)
        for q in range(4):
            d = exp_data(20000, BETA, lam=0.3, censor=0.25, seed=100 + q)
            state = apply_update(state, UpdateStrategy(kind), d, ["x0", "x1"])
            assert not state.retained_previous
        m = state.model
        s = (predict_survival(m, x_ref, 0.25) if kind.startswith("refit")
             else posterior_predictive_survival(m, x_ref, 0.25))
        assert abs(s - s0) <= 0.02, kind
        assert state.update_count == 4


def test_bayes_update_adds_new_covariates(cox0):
    d = exp_data(3000, [0.5, -0.8, 0.7], lam=0.3, censor=1.0, seed=14)
    d = make_data(d.time, d.event, d.X, names=["x0", "x1", "t"])
    state = apply_update(ModelState(cox0), UpdateStrategy("bayes_quarterly"), d, ["x0", "x1", "t"])
    assert state.model.spec.names == ("x0", "x1", "t")
    assert isinstance(state.model, BayesPHModel)
    refit_state = apply_update(ModelState(cox0), UpdateStrategy("refit_quarterly"), d, ["x0", "x1", "t"])
    assert refit_state.model.spec.names == ("x0", "x1", "t")
    recal = apply_update(ModelState(cox0), UpdateStrategy("recalibrate_quarterly"), d, ["x0", "x1", "t"])
    assert recal.model.spec.names == ("x0", "x1")


def test_strategy_validation_and_names():
    assert set(KINDS) >= {"no_update", "refit_once", "bayes_quarterly"}
    with pytest.raises(ValueError):
        UpdateStrategy("refit_once")
    with pytest.raises(ValueError):
        UpdateStrategy("refit_once", 1.0)
    with pytest.raises(ValueError):
        UpdateStrategy("no_update", 0.5)
    with pytest.raises(ValueError):
        UpdateStrategy("bayes_quarterly", forgetting=0.0)
    with pytest.raises(ValueError):
        UpdateStrategy("shrink")
    for s in (UpdateStrategy("refit_once", 0.46), UpdateStrategy("bayes_quarterly", forgetting=0.95),
              UpdateStrategy("recalibrate_quarterly")):
        assert UpdateStrategy.parse(s.name) == s
