import numpy as np
import pytest

from hmcecs.config import RunConfig
from hmcecs.hmc import (
    ChainTrace,
    HamiltonianSpec,
    PhasePoint,
    hmc_step,
    leapfrog,
    run_hmc_ecs,
    run_hmc_full,
)
from hmcecs.model import Dataset, DomainError


def gaussian_target(d, rng):
    """Random SPD precision; returns (potential, grad, precision)."""
    w = rng.standard_normal((d, d))
    prec = w @ w.T + d * np.eye(d)

    def potential(theta):
        return float(0.5 * theta @ prec @ theta)

    def grad(theta):
        return prec @ theta

    return potential, grad, prec


class TestHamiltonianSpec:
    def test_kinetic_and_momentum_covariance(self, rng):
        m = np.array([[2.0, 0.5], [0.5, 1.0]])
        spec = HamiltonianSpec(m, 0.1, 5)
        p = np.array([1.0, -2.0])
        assert spec.kinetic(p) == pytest.approx(
            0.5 * p @ np.linalg.solve(m, p), rel=1e-12
        )
        draws = np.array([spec.sample_momentum(rng) for _ in range(20000)])
        assert np.abs(np.cov(draws.T) - m).max() < 0.1

    def test_validation(self):
        with pytest.raises(DomainError):
            HamiltonianSpec(np.array([[1.0, 0.9], [0.2, 1.0]]), 0.1, 1)
        with pytest.raises(DomainError):
            HamiltonianSpec(-np.eye(2), 0.1, 1)
        with pytest.raises(DomainError):
            HamiltonianSpec(np.eye(2), -0.1, 1)
        with pytest.raises(DomainError):
            HamiltonianSpec(np.eye(2), 0.1, 0)

    def test_with_eps_preserves_trajectory_length(self):
        spec = HamiltonianSpec(np.eye(2), 0.1, 20)
        smaller = spec.with_eps(0.05, spec.traj_length)
        assert smaller.l_steps == 40
        assert smaller.traj_length == pytest.approx(spec.traj_length)


class TestLeapfrog:
    def test_free_particle_is_exact(self):
        spec = HamiltonianSpec(np.eye(2), 0.25, 8)
        start = PhasePoint(np.array([1.0, -1.0]), np.array([0.5, 2.0]))
        end, diverged, n_grad = leapfrog(spec, start, lambda th: np.zeros(2))
        assert not diverged
        assert n_grad == spec.l_steps + 1
        assert np.allclose(end.theta, start.theta + spec.traj_length * start.p)
        assert np.allclose(end.p, -start.p)  # momentum negated at the end

    def test_reversibility(self, rng):
        potential, grad, _ = gaussian_target(3, rng)
        spec = HamiltonianSpec(np.eye(3), 0.1, 25)
        start = PhasePoint(rng.standard_normal(3), rng.standard_normal(3))
        end, _, _ = leapfrog(spec, start, grad)
        back, _, _ = leapfrog(spec, end, grad)
        assert np.abs(back.theta - start.theta).max() < 1e-8
        assert np.abs(back.p - start.p).max() < 1e-8

    def test_jacobian_determinant_is_one(self, rng):
        potential, grad, _ = gaussian_target(2, rng)
        spec = HamiltonianSpec(np.eye(2), 0.15, 10)
        z0 = np.concatenate([rng.standard_normal(2), rng.standard_normal(2)])

        def flow(z):
            end, _, _ = leapfrog(spec, PhasePoint(z[:2], z[2:]), grad)
            return np.concatenate([end.theta, end.p])

        h = 1e-5
        jac = np.empty((4, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            jac[:, j] = (flow(z0 + e) - flow(z0 - e)) / (2 * h)
        assert abs(abs(np.linalg.det(jac)) - 1.0) < 1e-4

    def test_energy_error_is_second_order(self, rng):
        potential, grad, _ = gaussian_target(3, rng)
        m = np.eye(3)
        theta0 = rng.standard_normal(3)
        p0 = rng.standard_normal(3)
        traj = 1.0

        def energy_error(eps):
            spec = HamiltonianSpec(m, eps, int(round(traj / eps)))
            end, _, _ = leapfrog(spec, PhasePoint(theta0, p0), grad)
            h0 = potential(theta0) + spec.kinetic(p0)
            h1 = potential(end.theta) + spec.kinetic(end.p)
            return abs(h1 - h0)

        ratio = energy_error(0.04) / energy_error(0.02)
        assert 3.0 < ratio < 5.0

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_divergence_flagged(self):
        spec = HamiltonianSpec(np.eye(1), 10.0, 5)
        # steep quartic potential: large steps blow up to non-finite values
        end, diverged, _ = leapfrog(
            spec,
            PhasePoint(np.array([3.0]), np.array([0.0])),
            lambda th: 1e6 * th ** 3,
        )
        assert diverged


class TestHmcStep:
    def test_samples_gaussian_moments(self, rng):
        potential, grad, prec = gaussian_target(2, rng)
        cov = np.linalg.inv(prec)
        spec = HamiltonianSpec(prec, 0.5, 4)  # precision as mass matrix
        theta = np.zeros(2)
        u_val = potential(theta)
        draws = np.empty((6000, 2))
        n_accept = 0
        for j in range(6000):
            theta, u_val, accepted, alpha, dh, diverged = hmc_step(
                theta, u_val, potential, grad, spec, rng
            )
            assert not diverged
            n_accept += accepted
            draws[j] = theta
        assert n_accept / 6000 > 0.5
        kept = draws[1000:]
        sd = np.sqrt(np.diag(cov))
        assert np.abs(kept.mean(axis=0) / sd).max() < 0.12
        assert np.abs(kept.std(axis=0) / sd - 1.0).max() < 0.12

    def test_divergent_proposal_is_rejected(self, rng):
        spec = HamiltonianSpec(np.eye(1), 5.0, 3)
        theta = np.array([2.0])

        def potential(th):
            return float(1e8 * th @ th)

        def grad(th):
            return 2e8 * th

        u_val = potential(theta)
        theta2, u2, accepted, alpha, dh, diverged = hmc_step(
            theta, u_val, potential, grad, spec, rng
        )
        assert diverged and not accepted and alpha == 0.0
        assert np.array_equal(theta2, theta)


class TestChainTrace:
    def test_record_stream_round_trip(self, tmp_path):
        import pandas as pd

        trace = ChainTrace(d=2, total=4, n_train=2)
        path = tmp_path / "trace.csv"
        trace.open_stream(path)
        for j in range(4):
            trace.record(
                j,
                np.array([j, -j], dtype=float),
                phase=float(j >= 2),
                accept_theta=1.0,
                alpha_theta=0.9,
                eps=0.1,
                l_steps=3,
                diverged=0.0,
                point_evals=10.0 * (j + 1),
                wall=0.5,
                ell_hat=-1.0,
                sigma2_hat=0.0,
                accept_u=np.nan,
                alpha_u=np.nan,
                sign=1.0,
            )
        trace.close_stream()
        frame = pd.read_csv(path)
        assert list(frame.columns) == trace.columns()
        back = ChainTrace.from_frame(frame)
        assert np.array_equal(back.theta, trace.theta)
        assert back.n_train == 2
        assert back.total_point_evals() == 40.0
        assert back.kept.shape == (2, 2)


class TestSharedSeedEquivalence:
    def test_quadratic_model_reproduces_full_hmc(self, rng):
        """With exact proxies (quadratic likelihood) the estimated potential
        equals the exact one, so the subsampling driver must reproduce the
        full-data driver's acceptance decisions under the shared seed."""
        data = Dataset(rng.standard_normal((300, 3)), np.zeros(300))
        base = dict(
            model="quadratic", n_train=0, n_samples=300, seed=11,
            eps=0.08, traj_length=0.8, mass="identity",
        )
        cfg_full = RunConfig(mode="hmc", **base)
        cfg_ecs = RunConfig(mode="hmc-ecs", m=30, g=3, **base)
        tr_full = run_hmc_full(cfg_full, data)
        tr_ecs = run_hmc_ecs(cfg_ecs, data)
        assert np.array_equal(
            tr_full.accept_theta, tr_ecs.accept_theta
        )
        assert np.abs(tr_full.theta - tr_ecs.theta).max() < 1e-8
