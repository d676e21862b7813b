import numpy as np
import pytest

from hmcecs import estimators as est
from hmcecs.control_variates import build_cache
from hmcecs.model import DomainError, generate_synthetic


@pytest.fixture(scope="module")
def tiny():
    """Small problem where exp(ell) fits comfortably after recentering."""
    data = generate_synthetic(300, 3, np.array([0.6, -0.4, 0.2]), seed=12)
    from hmcecs.model import LogisticModel

    model = LogisticModel()
    cache = build_cache(model, data, np.array([0.5, -0.3, 0.1]))
    return model, data, cache


def test_zero_factor_count_gives_constant(tiny, rng):
    model, data, cache = tiny
    out = est.poisson_estimate(
        model, cache, data, np.zeros(3), mu=5.0, a=-100.0, m_b=10,
        blocks=np.empty((0, 10), dtype=np.int64),
    )
    assert out.g == 0 and out.sign == 1
    assert out.log_abs == pytest.approx(-100.0 + 5.0)


def test_negative_factors_flip_sign(tiny):
    model, data, cache = tiny
    theta = np.array([0.5, -0.3, 0.1])  # = theta*, so each ell_hat = ell exactly
    ell = model.loglik(data, theta).sum()
    blocks = np.tile(np.arange(10, dtype=np.int64), (1, 1))
    out = est.poisson_estimate(
        model, cache, data, theta, mu=2.0, a=ell + 1.0, m_b=10, blocks=blocks
    )
    assert out.sign == -1  # one negative factor
    blocks2 = np.tile(np.arange(10, dtype=np.int64), (2, 1))
    out2 = est.poisson_estimate(
        model, cache, data, theta, mu=2.0, a=ell + 1.0, m_b=10, blocks=blocks2
    )
    assert out2.sign == 1  # two negative factors


def test_degenerate_zero_factor_flagged(tiny):
    model, data, cache = tiny
    theta = np.array([0.5, -0.3, 0.1])
    blocks = np.arange(10, dtype=np.int64).reshape(1, 10)
    # choose a equal to the block's own estimate so the factor is exactly 0
    a = est.loglik_estimate(model, cache, data, theta, blocks[0]).ell_hat
    out = est.poisson_estimate(
        model, cache, data, theta, mu=2.0, a=a, m_b=10, blocks=blocks
    )
    assert out.degenerate
    assert out.log_abs == -np.inf


def test_monte_carlo_unbiasedness(tiny, rng):
    """E[L_hat] = exp(ell(theta)): average sign * exp(log_abs - ell) over
    fresh Poisson randomness and compare to 1 within 3 standard errors."""
    model, data, cache = tiny
    theta = np.array([0.45, -0.35, 0.15])
    ell = model.loglik(data, theta).sum()
    a = ell - 4.0
    mu = 4.0
    reps = 3000
    vals = np.empty(reps)
    for r in range(reps):
        out = est.poisson_estimate(
            model, cache, data, theta, mu=mu, a=a, m_b=30, rng=rng
        )
        assert not out.degenerate
        vals[r] = out.sign * np.exp(out.log_abs - ell)
    se = vals.std(ddof=1) / np.sqrt(reps)
    assert abs(vals.mean() - 1.0) < 3 * se


def test_grad_matches_finite_differences(tiny, rng):
    model, data, cache = tiny
    theta = np.array([0.45, -0.35, 0.15])
    blocks = est.poisson_blocks(data.n, 4, 25, rng)
    a = model.loglik(data, theta).sum() - 5.0

    def log_abs(t):
        return est.poisson_estimate(
            model, cache, data, t, mu=3.0, a=a, m_b=25, blocks=blocks
        ).log_abs

    g = est.poisson_grad(model, cache, data, theta, a, blocks)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (log_abs(theta + e) - log_abs(theta - e)) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_correlated_draw_preserves_poisson_marginal(rng):
    mu, rho = 6.0, 0.9
    z = rng.standard_normal()
    draws = np.empty(20000)
    for r in range(20000):
        g, z = est.correlate_poisson_draw(z, rho, mu, rng)
        draws[r] = g
    # Poisson(mu): mean = var = mu
    assert draws.mean() == pytest.approx(mu, rel=0.05)
    assert draws.var() == pytest.approx(mu, rel=0.10)


def test_correlated_draw_is_sticky(rng):
    mu = 6.0
    z = 0.0
    gs = []
    for _ in range(2000):
        g, z = est.correlate_poisson_draw(z, 0.995, mu, rng)
        gs.append(g)
    gs = np.asarray(gs, dtype=float)
    lag1 = np.corrcoef(gs[:-1], gs[1:])[0, 1]
    assert lag1 > 0.9


def test_default_bound_sits_below_pilot(tiny):
    model, data, cache = tiny
    ell = -150.0
    a = est.default_poisson_bound(ell, sigma_pilot=0.5, d=5)
    assert a < ell - 3 * 0.5
    mu = est.default_poisson_mu(ell, a)
    assert mu == pytest.approx(ell - a)
    assert est.default_poisson_mu(ell, ell + 10.0) == 1.0


def test_validation(tiny, rng):
    model, data, cache = tiny
    with pytest.raises(DomainError):
        est.poisson_estimate(model, cache, data, np.zeros(3), mu=-1.0, a=0.0, m_b=5,
                             rng=rng)
    with pytest.raises(DomainError):
        est.poisson_estimate(model, cache, data, np.zeros(3), mu=1.0, a=0.0, m_b=5)
    with pytest.raises(DomainError):
        est.correlate_poisson_draw(0.0, 1.5, 1.0, rng)
