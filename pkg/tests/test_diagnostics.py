import numpy as np
import pytest

from hmcecs.control_variates import build_cache
from hmcecs.diagnostics import (
    EfficiencyReport,
    computational_time,
    ess,
    inefficiency_factor,
    perturbation_error,
    relative_ct,
    sign_corrected_mean,
)
from hmcecs.model import DomainError


def ar1(phi, n, rng):
    x = np.empty(n)
    x[0] = rng.standard_normal() / np.sqrt(1 - phi ** 2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + rng.standard_normal()
    return x


class TestInefficiencyFactor:
    def test_iid_series_is_near_one(self, rng):
        values = [inefficiency_factor(rng.standard_normal(5000)) for _ in range(10)]
        assert np.mean(values) < 1.3

    def test_ar1_matches_analytic_value(self, rng):
        # IF of an AR(1) chain is (1+phi)/(1-phi) = 3 at phi = 0.5
        values = [inefficiency_factor(ar1(0.5, 100_000, rng)) for _ in range(5)]
        assert np.mean(values) == pytest.approx(3.0, rel=0.10)

    def test_short_series_rejected(self, rng):
        with pytest.raises(DomainError):
            inefficiency_factor(rng.standard_normal(50))

    def test_constant_series_rejected(self):
        with pytest.raises(DomainError):
            inefficiency_factor(np.ones(500))

    def test_ess_is_n_over_if(self, rng):
        x = ar1(0.5, 50_000, rng)
        assert ess(x) == pytest.approx(len(x) / inefficiency_factor(x), rel=1e-12)


class TestCostAccounting:
    def _report(self, if_values, evals):
        return EfficiencyReport(
            if_values=np.asarray(if_values, dtype=float),
            ess_values=1.0 / np.asarray(if_values, dtype=float),
            alpha_u_mean=1.0,
            alpha_theta_mean=0.8,
            total_point_evals=float(evals),
        )

    def test_ct_and_rct(self):
        full = self._report([2.0, 4.0], 1_000_000)
        sub = self._report([2.0, 2.0], 10_000)
        assert np.allclose(computational_time(full), [2e6, 4e6])
        assert np.allclose(relative_ct(full, sub), [100.0, 200.0])

    def test_zero_evals_rejected(self):
        with pytest.raises(DomainError):
            computational_time(self._report([1.0], 0))


class TestSignCorrectedMean:
    def test_hand_example(self):
        est, neg = sign_corrected_mean([1.0, 1.0, -1.0], [1.0, 2.0, 3.0])
        assert est == pytest.approx(0.0)
        assert neg == pytest.approx(1.0 / 3.0)

    def test_vector_psi(self):
        psi = np.array([[1.0, 10.0], [3.0, 30.0]])
        est, neg = sign_corrected_mean([1.0, 1.0], psi)
        assert np.allclose(est, [2.0, 20.0])
        assert neg == 0.0

    def test_all_positive_reduces_to_mean(self, rng):
        psi = rng.standard_normal(200)
        est, _ = sign_corrected_mean(np.ones(200), psi)
        assert est == pytest.approx(psi.mean(), rel=1e-12)

    def test_zero_denominator_rejected(self):
        with pytest.raises(DomainError):
            sign_corrected_mean([1.0, -1.0], [1.0, 2.0])


class TestPerturbationError:
    def test_zero_at_center(self, logistic, small_data, small_cache, rng):
        val, se = perturbation_error(
            logistic, small_cache, small_data, small_cache.theta_star,
            m=50, replications=200, rng=rng,
        )
        assert val == 0.0 and se == 0.0

    def test_matches_brute_force_average(self, logistic, small_data, small_cache,
                                         rng):
        """Small-residual regime: compare against the direct Monte-Carlo
        average of exp(ell_hat - sigma2/2 - ell) - 1 over fresh draws."""
        theta = small_cache.theta_star + 0.05 * np.ones(small_data.d)
        m = 100
        val, se = perturbation_error(
            logistic, small_cache, small_data, theta, m=m,
            replications=50_000, rng=rng,
        )
        e_all = logistic.residuals(small_data, theta, small_cache.theta_star)
        n = small_data.n
        reps = 50_000
        u = rng.integers(0, n, size=(reps, m))
        w = e_all[u]
        wbar = w.mean(axis=1)
        s2 = ((w - wbar[:, None]) ** 2).mean(axis=1)
        d_vals = n * (wbar - e_all.mean()) - n ** 2 / (2 * m) * s2
        brute = np.exp(d_vals).mean() - 1.0
        brute_se = np.exp(d_vals).std(ddof=1) / np.sqrt(reps)
        assert abs(val - brute) < 4 * (se + brute_se)

    def test_few_replications_rejected(self, logistic, small_data, small_cache, rng):
        with pytest.raises(DomainError):
            perturbation_error(
                logistic, small_cache, small_data, small_cache.theta_star,
                m=10, replications=10, rng=rng,
            )
