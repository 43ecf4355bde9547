"""Posterior inference for the exponential-baseline proportional hazards model.

Parameters are ordered ``(log_lambda, beta_1, ..., beta_p)``.  The posterior
is summarised by its mode and a Laplace (inverse negative Hessian) covariance;
a random-walk Metropolis sampler is available to check that approximation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import BayesPHModel, Dataset, DimensionError, DomainError, NonConvergence
from .cox import FitOptions


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        sd = np.array(self.sd, dtype=float)
        if mean.shape != sd.shape or mean.ndim != 1:
            raise DimensionError("prior mean and sd must be 1-d and of equal length")
        if np.any(~(sd > 0)):
            raise DomainError("prior sds must be positive")
        mean.setflags(write=False)
        sd.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sd", sd)

    def __len__(self) -> int:
        return len(self.mean)


@dataclass
class SamplerDiagnostics:
    rhat: np.ndarray
    ess: np.ndarray
    accepted_fraction: float
    converged: bool = True


def _check(params, data: Dataset, prior: GaussianPrior):
    params = np.asarray(params, dtype=float)
    k = len(data.spec) + 1
    if params.shape != (k,) or len(prior) != k:
        raise DimensionError(f"expected {k} parameters (log_lambda + {k - 1} covariates)")
    return params


def log_posterior(params, data: Dataset, prior: GaussianPrior) -> float:
    """Exponential PH log-likelihood plus independent normal log-priors (up to a constant).

    loglik = sum_i d_i (log lambda + eta_i) - lambda exp(eta_i) t_i
    """
    params = _check(params, data, prior)
    z = (params - prior.mean) / prior.sd
    lp = -0.5 * float(z @ z)
    if len(data):
        lin = params[0] + data.X @ params[1:]
        lp += float(np.sum(data.event * lin) - np.sum(np.exp(lin) * data.time))
    return lp


def log_posterior_derivatives(params, data: Dataset, prior: GaussianPrior):
    """Value, gradient and Hessian of :func:`log_posterior`."""
    params = _check(params, data, prior)
    prec = 1.0 / prior.sd**2
    diff = params - prior.mean
    value = -0.5 * float(np.sum(diff**2 * prec))
    grad = -diff * prec
    hess = -np.diag(prec)
    if len(data):
        Z = np.column_stack([np.ones(len(data)), data.X])
        lin = Z @ params
        mu = np.exp(lin) * data.time
        value += float(np.sum(data.event * lin) - mu.sum())
        grad = grad + Z.T @ (data.event - mu)
        hess = hess - (Z * mu[:, None]).T @ Z
    return value, grad, hess


def map_laplace(data: Dataset, prior: GaussianPrior, opts: FitOptions = FitOptions(),
                *, fit_period: int | None = None, forgetting: float = 0.9) -> BayesPHModel:
    """Posterior mode by Newton's method and the Laplace covariance at the mode."""
    theta = np.array(prior.mean, dtype=float)
    _check(theta, data, prior)
    value, grad, hess = log_posterior_derivatives(theta, data, prior)
    for _ in range(opts.max_iter):
        if np.max(np.abs(grad)) < opts.tol:
            break
        step = np.linalg.solve(-hess, grad)
        for _ in range(opts.max_halvings + 1):
            cand = theta + step
            new = log_posterior_derivatives(cand, data, prior)
            if np.isfinite(new[0]) and new[0] >= value - 1e-12 * abs(value):
                break
            step = step / 2
        else:
            raise NonConvergence("step halving failed to increase the log posterior")
        theta = cand
        value, grad, hess = new
        if not np.all(np.isfinite(theta)) or np.any(np.abs(theta) > 1e3):
            raise NonConvergence("posterior mode diverged")
    else:
        # relative criterion: the gradient of a large sample sits at rounding level
        if np.max(np.abs(grad)) >= max(opts.tol, 1e-7 * np.max(np.abs(np.diag(hess)))):
            raise NonConvergence(f"no convergence after {opts.max_iter} iterations")
    cov = np.linalg.inv(-hess)
    cov = 0.5 * (cov + cov.T)
    return BayesPHModel(
        data.spec,
        theta,
        cov,
        theta.copy(),  # the Gaussian approximation's medians equal its mode
        data.period if fit_period is None else fit_period,
        forgetting,
    )


def _rhat_split(chains: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction factor; ``chains`` is (m, n, k)."""
    m, n, _ = chains.shape
    half = n // 2
    parts = np.concatenate([chains[:, :half], chains[:, n - half:]], axis=0)
    n = half
    chain_means = parts.mean(axis=1)
    chain_vars = parts.var(axis=1, ddof=1)
    W = chain_vars.mean(axis=0)
    B = n * chain_means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    # chains that never moved carry no information about mixing
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(W > 0, np.sqrt(var_plus / W), np.inf)


def _ess(chains: np.ndarray) -> np.ndarray:
    """Multi-chain effective sample size with Geyer's initial positive sequence."""
    m, n, k = chains.shape
    out = np.empty(k)
    for j in range(k):
        x = chains[:, :, j] - chains[:, :, j].mean(axis=1, keepdims=True)
        f = np.fft.rfft(x, n=2 * n, axis=1)
        acov = np.fft.irfft(f * np.conj(f), axis=1)[:, :n] / n
        W = acov[:, 0].mean() * n / (n - 1)
        B_over_n = chains[:, :, j].mean(axis=1).var(ddof=1) if m > 1 else 0.0
        var_plus = (n - 1) / n * W + B_over_n
        rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        tau = -1.0
        for t in range(0, n - 1, 2):
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            tau += 2 * pair
        out[j] = m * n / max(tau, 1e-12)
    return out


def sample_posterior(data: Dataset, prior: GaussianPrior, n_chains: int = 4,
                     n_iter: int = 4000, seed: int = 0, *, n_warmup: int | None = None):
    """Adaptive random-walk Metropolis draws from the exact posterior.

    Proposal covariance and scale are adapted during warmup only, so the
    retained draws form a proper Markov chain.  Chain ``c`` uses the seed
    ``seed + 1000 * c``.  Returns ``(draws, diagnostics)`` with draws of shape
    ``(n_chains, n_iter, k)``.
    """
    if n_chains < 2:
        raise ValueError("n_chains must be >= 2 to compute rhat")
    n_warmup = n_iter if n_warmup is None else n_warmup
    k = len(data.spec) + 1
    _check(prior.mean, data, prior)
    draws = np.empty((n_chains, n_iter, k))
    accepted = 0
    for c in range(n_chains):
        rng = np.random.default_rng(seed + 1000 * c)
        x = prior.mean + 0.1 * prior.sd * rng.standard_normal(k)
        lp = log_posterior(x, data, prior)
        cov = np.diag(prior.sd**2)
        log_scale = np.log(2.38**2 / k)
        history = []
        for it in range(n_warmup + n_iter):
            warm = it < n_warmup
            if warm and it >= 200 and it % 100 == 0:
                cov = np.cov(np.array(history[len(history) // 2:]).T).reshape(k, k) + 1e-12 * np.eye(k)
            L = np.linalg.cholesky(np.exp(log_scale) * cov)
            prop = x + L @ rng.standard_normal(k)
            lp_prop = log_posterior(prop, data, prior)
            acc = np.log(rng.uniform()) < lp_prop - lp
            if acc:
                x, lp = prop, lp_prop
            if warm:
                history.append(x)
                log_scale += (float(acc) - 0.234) / np.sqrt(it + 1)
            else:
                draws[c, it - n_warmup] = x
                accepted += int(acc)
    rhat = _rhat_split(draws)
    diag = SamplerDiagnostics(rhat, _ess(draws), accepted / (n_chains * n_iter))
    if np.any(rhat >= 1.1):
        diag.converged = False
        warnings.warn(f"rhat >= 1.1 for some parameters: {rhat}", ConvergenceWarning, stacklevel=2)
    return draws, diag


def _matrix_sqrt(cov) -> np.ndarray:
    w, V = np.linalg.eigh(np.asarray(cov, dtype=float))
    return V * np.sqrt(np.clip(w, 0.0, None))


def posterior_draws(model: BayesPHModel, n_draws: int, seed: int) -> np.ndarray:
    if n_draws < 1:
        raise DomainError("n_draws must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_draws, len(model.mode)))
    return model.mode + z @ _matrix_sqrt(model.covariance).T


def posterior_predictive_survival(model: BayesPHModel, x, t, n_draws: int = 1000, seed: int = 0):
    """Average of exp(-lambda_k t exp(beta_k'x)) over draws from the Gaussian posterior.

    ``x`` may be a single covariate vector or an ``(n, p)`` matrix, with ``t``
    a scalar or a length-``n`` array.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (len(model.spec),):
        raise DimensionError(f"expected {len(model.spec)} covariates, got shape {x.shape}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise DomainError("t must be finite and non-negative")
    theta = posterior_draws(model, n_draws, seed)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    tt = np.broadcast_to(t, (X.shape[0],))
    out = np.empty(X.shape[0])
    for lo in range(0, X.shape[0], 2048):
        blk = slice(lo, lo + 2048)
        lin = theta[:, 0][None, :] + X[blk] @ theta[:, 1:].T
        out[blk] = np.exp(-np.exp(lin) * tt[blk, None]).mean(axis=1)
    out[tt == 0] = 1.0
    return float(out[0]) if single and t.ndim == 0 else out


def plugin_survival(model: BayesPHModel, x, t):
    """exp(-lambda_hat t exp(beta_hat'x)) at the posterior point estimates."""
    x = np.asarray(x, dtype=float)
    lin = model.point_estimates[0] + x @ model.point_estimates[1:]
    return np.exp(-np.exp(lin) * np.asarray(t, dtype=float))
