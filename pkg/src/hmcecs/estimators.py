"""Subsample estimators of the log-likelihood, its variance and gradients,
the estimated potential energy, and the signed Poisson likelihood estimator.

Index sets u are drawn with replacement (m i.i.d. uniform indices) and the
uniform weights w_k = 1/n are hardwired. Every stochastic operation takes
an explicit numpy Generator so runs are replayable.
"""

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .control_variates import sum_q, sum_grad_q
from .model import DomainError, _as_index_array, _check_theta


def _u_fingerprint(u):
    return hashlib.blake2b(u.tobytes(), digest_size=8).hexdigest()


@dataclass(frozen=True)
class LogLikEstimate:
    ell_hat: float
    sigma2_hat: float
    u_fingerprint: str
    residuals: np.ndarray = None  # per-occurrence e_{u_i}, kept for reuse


def draw_indices(n, m, rng):
    """m i.i.d. uniform indices on 0..n-1 (sampling with replacement)."""
    return rng.integers(0, n, size=m, dtype=np.int64)


def loglik_estimate(model, cache, data, theta, u):
    """Difference estimator ell_hat and its variance estimate sigma2_hat."""
    cache.check(data)
    theta = _check_theta(theta)
    u = _as_index_array(data, u)
    m = u.shape[0]
    e = model.residuals(data, theta, cache.theta_star, u)
    ell_hat = sum_q(cache, theta) + (data.n / m) * e.sum()
    centered = e - e.mean()
    sigma2_hat = (data.n ** 2 / m ** 2) * (centered @ centered)
    return LogLikEstimate(
        ell_hat=float(ell_hat),
        sigma2_hat=float(sigma2_hat),
        u_fingerprint=_u_fingerprint(u),
        residuals=e,
    )


def grad_loglik_estimate(model, cache, data, theta, u):
    cache.check(data)
    theta = _check_theta(theta)
    u = _as_index_array(data, u)
    corr = model.residual_grad_sum(data, theta, cache.theta_star, u)
    return sum_grad_q(cache, theta) + (data.n / u.shape[0]) * corr


def grad_var_estimate(model, cache, data, theta, u):
    """Exact gradient of sigma2_hat(theta; u) at fixed u."""
    cache.check(data)
    theta = _check_theta(theta)
    u = _as_index_array(data, u)
    m = u.shape[0]
    e = model.residuals(data, theta, cache.theta_star, u)
    ge = model.residual_grads(data, theta, cache.theta_star, u)
    centered = e - e.mean()
    g_centered = ge - ge.mean(axis=0)
    return (2.0 * data.n ** 2 / m ** 2) * (g_centered.T @ centered)


def potential(model, cache, data, prior, theta, u):
    """U_hat = -ell_hat + sigma2_hat/2 - log prior."""
    est = loglik_estimate(model, cache, data, theta, u)
    return -est.ell_hat + 0.5 * est.sigma2_hat - prior.log_density(theta)


def grad_potential(model, cache, data, prior, theta, u):
    return (
        -grad_loglik_estimate(model, cache, data, theta, u)
        + 0.5 * grad_var_estimate(model, cache, data, theta, u)
        - prior.grad_log_density(theta)
    )


# ---------------------------------------------------------------------------
# Poisson (signed, unbiased-for-the-likelihood) estimator


@dataclass(frozen=True)
class PoissonEstimate:
    log_abs: float
    sign: int
    g: int  # Poisson draw (number of product factors)
    a: float
    mu: float
    degenerate: bool = False
    block_ells: np.ndarray = None  # ell_hat per factor, kept for reuse


def poisson_blocks(n, g, m_b, rng):
    """g independent index sets of size m_b, as a (g, m_b) array."""
    return rng.integers(0, n, size=(g, m_b), dtype=np.int64)


def poisson_estimate(model, cache, data, theta, mu, a, m_b, blocks=None, rng=None):
    """Signed product estimator of the likelihood.

    Either supply ``blocks`` (a (g, m_b) index array, e.g. from a
    correlated draw) or an rng from which G ~ Poisson(mu) and the index
    sets are drawn. The inner ell_hat factors use the difference estimator
    without the sigma2/2 correction.
    """
    if not mu > 0:
        raise DomainError("mu must be positive")
    if m_b < 1:
        raise DomainError("m_b must be >= 1")
    if blocks is None:
        if rng is None:
            raise DomainError("supply either blocks or rng")
        g = int(rng.poisson(mu))
        blocks = poisson_blocks(data.n, g, m_b, rng)
    blocks = np.asarray(blocks, dtype=np.int64).reshape(-1, m_b)
    g = blocks.shape[0]
    if g == 0:
        return PoissonEstimate(
            log_abs=a + mu, sign=1, g=0, a=a, mu=mu, block_ells=np.empty(0)
        )
    ells = np.empty(g)
    base = sum_q(cache, theta)
    for h in range(g):
        e = model.residuals(data, theta, cache.theta_star, blocks[h])
        ells[h] = base + (data.n / m_b) * e.sum()
    factors = ells - a
    if np.any(factors == 0.0):
        return PoissonEstimate(
            log_abs=-np.inf, sign=1, g=g, a=a, mu=mu, degenerate=True, block_ells=ells
        )
    sign = 1 if (factors < 0).sum() % 2 == 0 else -1
    log_abs = a + mu + np.log(np.abs(factors)).sum() - g * np.log(mu)
    return PoissonEstimate(
        log_abs=float(log_abs), sign=sign, g=g, a=a, mu=mu, block_ells=ells
    )


def poisson_grad(model, cache, data, theta, a, blocks):
    """Gradient of log|L_hat(theta)| at fixed Poisson randomness:
    Sum_h grad ell_hat^(h) / (ell_hat^(h) - a)."""
    blocks = np.asarray(blocks, dtype=np.int64)
    d = data.d
    out = np.zeros(d)
    if blocks.size == 0:
        return out
    m_b = blocks.shape[1]
    base = sum_q(cache, theta)
    base_grad = sum_grad_q(cache, theta)
    for h in range(blocks.shape[0]):
        u = blocks[h]
        e = model.residuals(data, theta, cache.theta_star, u)
        ell = base + (data.n / m_b) * e.sum()
        grad = base_grad + (data.n / m_b) * model.residual_grad_sum(
            data, theta, cache.theta_star, u
        )
        out += grad / (ell - a)
    return out


def poisson_surrogate_grad(model, cache, data, theta, blocks):
    """Block-averaged difference-estimator gradient over the current index
    sets: the gradient of mean_h ell_hat^(h).

    Together with that pooled log-likelihood it forms the training-phase
    target of the signed variant. The signed potential -log|L_hat| is a
    log-compressed function of ell_hat, so far from where the bound a was
    tuned it is orders of magnitude flatter than the posterior; driving
    adaptation with it would collapse the step size. The training chain
    therefore follows the pooled difference-estimator target, and the
    sampler switches to the signed target (with its exact gradient) once
    a and mu have been re-tuned at the training/sampling boundary.
    """
    blocks = np.asarray(blocks, dtype=np.int64)
    out = sum_grad_q(cache, theta)
    if blocks.size == 0:
        return out
    m_b = blocks.shape[1]
    corr = np.zeros(data.d)
    for h in range(blocks.shape[0]):
        corr += model.residual_grad_sum(data, theta, cache.theta_star, blocks[h])
    return out + (data.n / m_b) * corr / blocks.shape[0]


def correlate_poisson_draw(z, rho, mu, rng):
    """AR(1) Gaussian copula step for the Poisson count: the marginal of G
    stays exactly Poisson(mu) when z is standard normal."""
    if not abs(rho) < 1:
        raise DomainError("|rho| must be < 1")
    if not mu > 0:
        raise DomainError("mu must be positive")
    z_new = rho * z + np.sqrt(1.0 - rho ** 2) * rng.standard_normal()
    # clamp away from q=1.0, where the inverse CDF is infinite
    q = min(stats.norm.cdf(z_new), 1.0 - 1e-16)
    g = int(stats.poisson.ppf(q, mu))
    return g, z_new


def default_poisson_bound(ell_pilot, sigma_pilot, d, c=3.0):
    """Lower-bound constant a for the Poisson estimator.

    ell_pilot - c*sigma_pilot alone leaves a above the log-likelihood
    values visited across the posterior whenever the control variates are
    accurate (sigma tiny), producing mostly negative signs. The typical
    set spans roughly d/2 + O(sqrt(d)) log-likelihood units below a
    central point; a generous multiple of that spread is subtracted so
    that factor sign flips stay rare across the whole posterior.
    """
    return ell_pilot - c * sigma_pilot - 0.5 * d - 6.0 * np.sqrt(0.5 * d)


def default_poisson_mu(ell_pilot, a):
    """Variance-cost balance suggests mu of the order of the typical
    factor magnitude ell_hat - a."""
    return max(1.0, float(ell_pilot - a))
