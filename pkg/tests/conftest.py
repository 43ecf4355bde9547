import numpy as np
import pytest

from survupdate.core import CovariateSpec, Dataset


def make_data(time, event, X=None, names=None, period=0):
    time = np.asarray(time, dtype=float)
    if X is None:
        X = np.zeros((len(time), 0))
    X = np.asarray(X, dtype=float)
    X = X.reshape(len(time), X.shape[-1] if X.ndim == 2 else -1)
    if names is None:
        names = [f"x{j}" for j in range(X.shape[1])]
    kinds = ["binary" if np.isin(X[:, j], (0, 1)).all() else "continuous" for j in range(X.shape[1])]
    return Dataset(CovariateSpec(tuple(names), tuple(kinds)), np.arange(len(time)).astype(str),
                   time, np.asarray(event, dtype=bool), X, period)


def exp_data(n, beta, lam=1.0, censor=None, seed=0, binary=None):
    """Exponential PH data: X ~ N(0,1) (or Bernoulli columns), optional admin censoring."""
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    X = rng.standard_normal((n, len(beta)))
    for j in binary or ():
        X[:, j] = rng.random(n) < 0.5
    T = rng.exponential(1.0, n) / (lam * np.exp(X @ beta))
    if censor is None:
        return make_data(T, np.ones(n, bool), X)
    return make_data(np.minimum(T, censor), T <= censor, X)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
