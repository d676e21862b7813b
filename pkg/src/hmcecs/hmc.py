"""Leapfrog integration, the HMC-within-Gibbs drivers, and the chain trace.

Three drivers share one loop skeleton:

* ``run_hmc_full``  - standard HMC on the exact full-data posterior.
* ``run_hmc_ecs``   - Gibbs Step 1 (block update of the subsample indices)
  followed by Step 2 (HMC driven by the estimated Hamiltonian, with the
  same index set in the trajectory and in the accept test).
* ``run_hmc_ecs_poisson`` - the signed (exact) variant built on the
  Poisson likelihood estimator with correlated Poisson counts.

Seed protocol: the run seed spawns independent streams for the index
updates and for the (theta, p) updates, so that with exact estimators
(quadratic test model) the subsampling drivers reproduce the full-data
driver's acceptance decisions draw for draw.
"""

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import estimators as est
from . import subsample as sub
from . import tuning
from .model import DomainError, Prior, make_model
from .control_variates import build_cache


class DivergenceError(RuntimeError):
    """The run aborted (adaptation collapse), as opposed to a config error."""


#: |dH| beyond this (or any non-finite state) marks a divergent trajectory,
#: which is treated as a rejection.
DIVERGENCE_THRESHOLD = 1000.0


@dataclass(frozen=True)
class HamiltonianSpec:
    """Mass matrix, step size and step count, with a cached factorization."""

    m_matrix: np.ndarray
    eps: float
    l_steps: int
    _chol: tuple = field(init=False, repr=False, compare=False)
    _chol_lower: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.asarray(self.m_matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DomainError("mass matrix must be square")
        if not self.eps > 0:
            raise DomainError("step size must be positive")
        if self.l_steps < 1:
            raise DomainError("step count must be >= 1")
        if np.abs(m - m.T).max() > 1e-8 * max(1.0, np.abs(m).max()):
            raise DomainError("mass matrix must be symmetric")
        try:
            lower = np.linalg.cholesky(m)
            chol = cho_factor(m, lower=True)
        except np.linalg.LinAlgError as exc:
            raise DomainError(f"mass matrix not positive definite: {exc}")
        object.__setattr__(self, "m_matrix", m)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_chol_lower", lower)

    @property
    def traj_length(self):
        return self.eps * self.l_steps

    def minv(self, p):
        return cho_solve(self._chol, p)

    def kinetic(self, p):
        return float(0.5 * p @ self.minv(p))

    def sample_momentum(self, rng):
        # p ~ N(0, M): p = C xi with M = C C'
        return self._chol_lower @ rng.standard_normal(self.m_matrix.shape[0])

    def with_eps(self, eps, traj_length):
        return HamiltonianSpec(self.m_matrix, eps, max(1, int(round(traj_length / eps))))


class PhasePoint(NamedTuple):
    theta: np.ndarray
    p: np.ndarray


def leapfrog(spec, start, grad_u):
    """Leapfrog with L position steps and the final momentum negation.

    Returns (end point, diverged flag, number of gradient evaluations);
    exactly L+1 gradient evaluations when the trajectory stays finite.
    """
    eps, l_steps = spec.eps, spec.l_steps
    theta = np.array(start.theta, dtype=np.float64)
    p = np.asarray(start.p, dtype=np.float64) - 0.5 * eps * grad_u(start.theta)
    n_grad = 1
    for l in range(1, l_steps + 1):
        theta = theta + eps * spec.minv(p)
        if not np.isfinite(theta).all():
            return PhasePoint(theta, p), True, n_grad
        g = grad_u(theta)
        n_grad += 1
        p = p - (eps if l < l_steps else 0.5 * eps) * g
        if not np.isfinite(p).all():
            return PhasePoint(theta, p), True, n_grad
    return PhasePoint(theta, -p), False, n_grad


def hmc_step(theta, u_val, potential_fn, grad_fn, spec, rng,
             divergence_threshold=DIVERGENCE_THRESHOLD):
    """One HMC proposal + MH correction against the Hamiltonian that
    generated the trajectory.

    Returns (theta', U(theta'), accepted, alpha, dH, diverged). A divergent
    trajectory is a rejection with alpha = 0.
    """
    p0 = spec.sample_momentum(rng)
    h0 = u_val + spec.kinetic(p0)
    end, diverged, _ = leapfrog(spec, PhasePoint(theta, p0), grad_fn)
    if not diverged:
        u_end = potential_fn(end.theta)
        dh = (u_end + spec.kinetic(end.p)) - h0
        if not np.isfinite(dh) or abs(dh) > divergence_threshold:
            diverged = True
    if diverged:
        rng.random()  # keep the stream aligned with the accept draw
        return theta, u_val, False, 0.0, np.inf, True
    alpha = 1.0 if dh <= 0 else float(np.exp(-dh))
    if rng.random() < alpha:
        return end.theta, u_end, True, alpha, float(dh), False
    return theta, u_val, False, alpha, float(dh), False


# ---------------------------------------------------------------------------
# chain trace


_TRACE_SCALARS = [
    "phase",
    "accept_u",
    "alpha_u",
    "accept_theta",
    "alpha_theta",
    "ell_hat",
    "sigma2_hat",
    "sign",
    "eps",
    "l_steps",
    "diverged",
    "point_evals",
    "wall",
]


class ChainTrace:
    """Per-iteration record of a run. ``point_evals`` and ``wall`` are
    cumulative; ``phase`` is 0 during training, 1 during sampling."""

    def __init__(self, d, total, n_train):
        self.d = d
        self.n_train = n_train
        self.theta = np.full((total, d), np.nan)
        for name in _TRACE_SCALARS:
            setattr(self, name, np.full(total, np.nan))
        self._stream = None
        self._rows = 0

    def open_stream(self, path):
        self._stream = open(path, "w")
        self._stream.write(",".join(self.columns()) + "\n")

    def columns(self):
        return (
            ["iter"]
            + [f"theta_{j}" for j in range(self.d)]
            + _TRACE_SCALARS
        )

    def record(self, j, theta, **scalars):
        self.theta[j] = theta
        for name, value in scalars.items():
            getattr(self, name)[j] = value
        self._rows = j + 1
        if self._stream is not None:
            vals = [str(j)]
            vals += ["%.17g" % v for v in theta]
            vals += ["%.17g" % getattr(self, name)[j] for name in _TRACE_SCALARS]
            self._stream.write(",".join(vals) + "\n")

    def close_stream(self):
        if self._stream is not None:
            self._stream.close()
            self._stream = None

    # -- views --------------------------------------------------------------

    @property
    def kept(self):
        """Sampling-phase slice of the parameter draws."""
        return self.theta[self.n_train :]

    def sampling(self, name):
        return getattr(self, name)[self.n_train :]

    def total_point_evals(self):
        return float(self.point_evals[self._rows - 1])

    def to_frame(self):
        import pandas as pd

        data = {"iter": np.arange(self.theta.shape[0])}
        for j in range(self.d):
            data[f"theta_{j}"] = self.theta[:, j]
        for name in _TRACE_SCALARS:
            data[name] = getattr(self, name)
        return pd.DataFrame(data)

    @classmethod
    def from_frame(cls, frame):
        d = sum(1 for c in frame.columns if c.startswith("theta_"))
        total = len(frame)
        n_train = int((frame["phase"] == 0).sum())
        trace = cls(d, total, n_train)
        trace.theta = frame[[f"theta_{j}" for j in range(d)]].to_numpy(dtype=np.float64)
        for name in _TRACE_SCALARS:
            setattr(trace, name, frame[name].to_numpy(dtype=np.float64))
        trace._rows = total
        return trace


# ---------------------------------------------------------------------------
# shared driver scaffolding


class _Run:
    """State shared by the three drivers: tuning, counters, recording."""

    def __init__(self, config, data, prior, model, m_matrix=None, stream_path=None):
        self.config = config
        self.data = data
        self.prior = prior
        self.model = model
        total = config.n_train + config.n_samples
        if total < 1:
            raise DomainError("no iterations requested")
        self.trace = ChainTrace(data.d, total, config.n_train)
        if stream_path is not None:
            self.trace.open_stream(stream_path)
        ss = np.random.SeedSequence(config.seed)
        kids = ss.spawn(3)
        self.rng_u = np.random.default_rng(kids[0])
        self.rng_theta = np.random.default_rng(kids[1])
        self.rng_init = np.random.default_rng(kids[2])
        self.theta = (
            np.zeros(data.d)
            if config.theta0 is None
            else np.asarray(config.theta0, dtype=np.float64)
        )
        if self.theta.shape != (data.d,):
            raise DomainError("theta0 has the wrong dimension")
        self.evals = 0.0
        self.t_start = time.perf_counter()
        self.m_override = m_matrix

    def init_mass(self, cache):
        if self.m_override is not None:
            return tuning.spd_jitter(np.asarray(self.m_override, dtype=np.float64))
        if self.config.mass == "identity":
            return np.eye(self.data.d)
        return tuning.spd_jitter(
            -(cache.b + self.prior.hess_log_density(self.data.d))
        )

    def init_eps(self, potential_fn, grad_fn, m_matrix):
        if self.config.eps is not None:
            return float(self.config.eps)
        u0 = potential_fn(self.theta)
        eps = tuning.find_initial_step_size(
            self.theta, potential_fn, grad_fn, m_matrix, self.rng_init
        )
        del u0
        return eps

    def traj_length(self, potential_fn, grad_fn, m_matrix, eps, cost_per_grad):
        if not self.config.pilot:
            return float(self.config.traj_length)
        return tuning.pilot_trajectory_length(
            potential_fn,
            grad_fn,
            self.theta,
            m_matrix,
            eps=min(eps, 0.1),
            seed=self.config.seed + 1,
            cost_per_grad=cost_per_grad,
        )

    def adapt_window(self, j):
        """Latest 10% (config.window_frac) of the iterates up to j."""
        lo = max(0, int((j + 1) * (1.0 - self.config.window_frac)))
        return self.trace.theta[lo : j + 1]

    def record(self, j, **scalars):
        scalars.setdefault("phase", 0.0 if j < self.config.n_train else 1.0)
        scalars.setdefault("sign", 1.0)
        scalars["point_evals"] = self.evals
        scalars["wall"] = time.perf_counter() - self.t_start
        self.trace.record(j, self.theta, **scalars)

    def finish(self):
        self.trace.close_stream()
        return self.trace


def _driver_loop(run, step1, make_closures, on_theta_accept, refresh,
                 sign_fn=None, on_freeze=None):
    """The common HMC-within-Gibbs iteration structure.

    step1(j)             -> (alpha_u, accept_u, U) or None for plain HMC
    make_closures()      -> (potential_fn, grad_fn)
    on_theta_accept(th)  -> sync sampler state after an accepted move
    refresh(j)           -> center/mass refresh; returns new mass or None
    on_freeze()          -> final re-tune of frozen sampler constants at the
                            training/sampling boundary
    """
    config = run.config
    potential_fn, grad_fn = make_closures()
    m_matrix = run.current_mass
    eps = run.current_eps
    traj = run.current_traj
    da = tuning.DualAveragingState(eps0=eps, delta=config.delta)
    spec = HamiltonianSpec(m_matrix, eps, max(1, int(round(traj / eps))))
    u_val = potential_fn(run.theta)
    total = config.n_train + config.n_samples

    for j in range(total):
        if j == config.n_train and config.n_train > 0:
            if on_freeze is not None:
                on_freeze()
                u_val = potential_fn(run.theta)
            eps = da.eps_frozen
            if not eps > 1e-12:
                raise DivergenceError(
                    f"dual averaging collapsed: frozen eps = {eps}"
                )
            spec = spec.with_eps(eps, traj)

        alpha_u = np.nan
        accept_u = np.nan
        if step1 is not None:
            alpha_u, accept_u, u_val = step1(j)

        spec_j = spec
        if config.jitter_l and spec.l_steps > 1:
            jit = int(round(spec.l_steps * 0.1))
            l_j = spec.l_steps + int(run.rng_theta.integers(-jit, jit + 1))
            spec_j = HamiltonianSpec(spec.m_matrix, spec.eps, max(1, l_j))

        run.theta, u_val, accepted, alpha, dh, diverged = hmc_step(
            run.theta, u_val, potential_fn, grad_fn, spec_j, run.rng_theta,
            config.divergence_threshold,
        )
        if accepted:
            on_theta_accept(run.theta)

        scalars = dict(
            accept_u=accept_u,
            alpha_u=alpha_u,
            accept_theta=float(accepted),
            alpha_theta=alpha,
            eps=spec_j.eps,
            l_steps=spec_j.l_steps,
            diverged=float(diverged),
        )
        if sign_fn is not None:
            scalars["sign"] = float(sign_fn())
        run.last_u_val = u_val
        run.record(j, **scalars, **run.estimate_scalars())

        if j < config.n_train:
            tuning.da_update(da, alpha)
            eps = da.eps
            if not eps > 1e-12:
                raise DivergenceError(f"dual averaging collapsed: eps = {eps}")
            spec = spec.with_eps(eps, traj)
            if (j + 1) % config.refresh_every == 0 and j + 1 < config.n_train:
                new_mass = refresh(j)
                if new_mass is not None:
                    spec = HamiltonianSpec(new_mass, spec.eps, spec.l_steps)
                    potential_fn, grad_fn = make_closures()
                    u_val = potential_fn(run.theta)

    return run.finish()


# ---------------------------------------------------------------------------
# drivers


def run_hmc_full(config, data, prior=None, model=None, m_matrix=None,
                 stream_path=None):
    """Standard (non-subsampling) HMC baseline on the exact posterior."""
    prior = prior if prior is not None else Prior(config.lam)
    model = model if model is not None else make_model(config.model)
    run = _Run(config, data, prior, model, m_matrix, stream_path)
    n = data.n

    def potential_fn(th):
        ell, _ = model.loglik_sum_grad(data, th)
        run.evals += n
        return -ell - prior.log_density(th)

    def grad_fn(th):
        _, g = model.loglik_sum_grad(data, th)
        run.evals += n
        return -g - prior.grad_log_density(th)

    def make_closures():
        return potential_fn, grad_fn

    cache = None
    if run.m_override is None and config.mass == "hessian":
        cache = build_cache(model, data, run.theta)
        run.evals += n
    run.current_mass = run.init_mass(cache)
    run.current_eps = run.init_eps(potential_fn, grad_fn, run.current_mass)
    run.current_traj = run.traj_length(
        potential_fn, grad_fn, run.current_mass, run.current_eps, cost_per_grad=n
    )

    def refresh(j):
        if run.m_override is not None or config.mass != "hessian":
            return None
        new_cache, new_mass = tuning.refresh_center(
            run.adapt_window(j), model, data, prior
        )
        run.evals += n
        return new_mass

    def estimate_scalars():
        # U = -ell - log prior, so recover ell at the current theta
        ell = -run.last_u_val - prior.log_density(run.theta)
        return dict(ell_hat=ell, sigma2_hat=0.0)

    run.estimate_scalars = estimate_scalars
    return _driver_loop(run, None, make_closures, lambda th: None, refresh)


def run_hmc_ecs(config, data, prior=None, model=None, m_matrix=None,
                stream_path=None):
    """HMC with energy-conserving subsampling (perturbed-target variant)."""
    prior = prior if prior is not None else Prior(config.lam)
    model = model if model is not None else make_model(config.model)
    run = _Run(config, data, prior, model, m_matrix, stream_path)
    n, m, g = data.n, config.m, config.g

    cache = build_cache(model, data, run.theta)
    run.evals += n
    run.current_mass = run.init_mass(cache)
    state = sub.SubsampleState(model, cache, data, run.theta, m, g, run.rng_u)
    run.evals += m

    last_est = {"est": state.estimate}

    def potential_fn(th):
        e = est.loglik_estimate(model, state.cache, data, th, state.u)
        run.evals += m
        last_est["est"] = e
        return -e.ell_hat + 0.5 * e.sigma2_hat - prior.log_density(th)

    def grad_fn(th):
        run.evals += m
        return est.grad_potential(model, state.cache, data, prior, th, state.u)

    def make_closures():
        return potential_fn, grad_fn

    run.current_eps = run.init_eps(potential_fn, grad_fn, run.current_mass)
    run.current_traj = run.traj_length(
        potential_fn, grad_fn, run.current_mass, run.current_eps, cost_per_grad=m
    )

    def step1(j):
        alpha_sum, acc_sum = 0.0, 0.0
        for _ in range(config.u_updates):
            accepted, alpha = sub.gibbs_update_u(
                state, run.theta, run.rng_u, cyclic=config.cyclic_blocks
            )
            run.evals += state.block_size
            alpha_sum += alpha
            acc_sum += accepted
        e = state.estimate
        last_est["est"] = e
        u_val = -e.ell_hat + 0.5 * e.sigma2_hat - prior.log_density(run.theta)
        return alpha_sum / config.u_updates, acc_sum / config.u_updates, u_val

    def on_theta_accept(th):
        e = last_est["est"]
        if e.residuals is not None and e.residuals.shape[0] == m:
            state.theta = np.array(th, dtype=np.float64, copy=True)
            blocks = e.residuals.reshape(g, state.block_size)
            state.block_sum_e = blocks.sum(axis=1)
            state.block_sum_e2 = (blocks * blocks).sum(axis=1)
        else:
            state.refresh_theta(th)
            run.evals += m

    def refresh(j):
        new_cache, new_mass = tuning.refresh_center(
            run.adapt_window(j), model, data, prior
        )
        run.evals += n
        state.refresh_cache(new_cache)
        run.evals += m
        return new_mass

    def estimate_scalars():
        e = state.estimate
        return dict(ell_hat=e.ell_hat, sigma2_hat=e.sigma2_hat)

    run.estimate_scalars = estimate_scalars
    return _driver_loop(run, step1, make_closures, on_theta_accept, refresh)


def run_hmc_ecs_poisson(config, data, prior=None, model=None, m_matrix=None,
                        stream_path=None):
    """Signed (exact) variant: Poisson likelihood estimator with correlated
    Poisson counts in the Gibbs index update; signs recorded for the
    sign-corrected expectation estimator."""
    prior = prior if prior is not None else Prior(config.lam)
    model = model if model is not None else make_model(config.model)
    run = _Run(config, data, prior, model, m_matrix, stream_path)
    n, m_b, rho = data.n, config.m_b, config.rho

    cache = build_cache(model, data, run.theta)
    run.evals += n
    run.current_mass = run.init_mass(cache)

    ps = {"z": run.rng_u.standard_normal()}

    def tune_ab():
        """Pilot call of the inner estimator at the current theta; sets the
        lower bound a and, if unset in config, the Poisson mean mu."""
        u = est.draw_indices(n, m_b, run.rng_u)
        pilot = est.loglik_estimate(model, cache, data, run.theta, u)
        run.evals += m_b
        a = config.a
        if a is None:
            a = est.default_poisson_bound(
                pilot.ell_hat, np.sqrt(pilot.sigma2_hat), data.d, config.a_c
            )
        mu = config.mu if config.mu is not None else est.default_poisson_mu(
            pilot.ell_hat, a
        )
        ps["a"], ps["mu"] = float(a), float(mu)

    def refresh_randomness():
        g0 = int(stats_poisson_ppf(ps["z"], ps["mu"]))
        ps["blocks"] = est.poisson_blocks(n, g0, m_b, run.rng_u)
        ps["est"] = est.poisson_estimate(
            model, cache, data, run.theta, ps["mu"], ps["a"], m_b,
            blocks=ps["blocks"],
        )
        run.evals += ps["blocks"].shape[0] * m_b

    tune_ab()
    refresh_randomness()
    # the training chain follows the pooled difference-estimator target;
    # the signed target takes over once a and mu are frozen (immediately
    # if there is no training phase)
    ps["signed"] = config.n_train == 0

    def _ell_bar(e, th):
        if e.g == 0:
            return float(est.sum_q(cache, th))
        return float(np.mean(e.block_ells))

    def potential_fn(th):
        e = est.poisson_estimate(
            model, cache, data, th, ps["mu"], ps["a"], m_b, blocks=ps["blocks"]
        )
        run.evals += ps["blocks"].shape[0] * m_b
        ps["pending"] = e
        if ps["signed"]:
            if e.degenerate:
                return np.inf
            return -e.log_abs - prior.log_density(th)
        return -_ell_bar(e, th) - prior.log_density(th)

    def grad_fn(th):
        run.evals += ps["blocks"].shape[0] * m_b
        if ps["signed"]:
            g = est.poisson_grad(model, cache, data, th, ps["a"], ps["blocks"])
        else:
            g = est.poisson_surrogate_grad(model, cache, data, th, ps["blocks"])
        return -g - prior.grad_log_density(th)

    def make_closures():
        return potential_fn, grad_fn

    run.current_eps = run.init_eps(potential_fn, grad_fn, run.current_mass)
    run.current_traj = run.traj_length(
        potential_fn, grad_fn, run.current_mass, run.current_eps,
        cost_per_grad=max(1, ps["blocks"].shape[0]) * m_b,
    )

    def step1(j):
        g_new, z_new = est.correlate_poisson_draw(
            ps["z"], rho, ps["mu"], run.rng_u
        )
        blocks_new = est.poisson_blocks(n, g_new, m_b, run.rng_u)
        e_new = est.poisson_estimate(
            model, cache, data, run.theta, ps["mu"], ps["a"], m_b,
            blocks=blocks_new,
        )
        run.evals += g_new * m_b
        cur = ps["est"]
        if ps["signed"] and e_new.degenerate:
            alpha = 0.0
            accepted = False
        else:
            if ps["signed"]:
                log_ratio = e_new.log_abs - cur.log_abs
            else:
                log_ratio = _ell_bar(e_new, run.theta) - _ell_bar(
                    cur, run.theta
                )
            alpha = 1.0 if log_ratio >= 0 else float(np.exp(log_ratio))
            accepted = run.rng_u.random() < alpha
        if accepted:
            ps["z"], ps["blocks"], ps["est"] = z_new, blocks_new, e_new
        if ps["signed"]:
            u_val = -ps["est"].log_abs - prior.log_density(run.theta)
        else:
            u_val = -_ell_bar(ps["est"], run.theta) - prior.log_density(
                run.theta
            )
        return alpha, float(accepted), u_val

    def on_theta_accept(th):
        e = ps.get("pending")
        if e is not None:
            ps["est"] = e
        else:
            ps["est"] = est.poisson_estimate(
                model, cache, data, th, ps["mu"], ps["a"], m_b,
                blocks=ps["blocks"],
            )
            run.evals += ps["blocks"].shape[0] * m_b

    def refresh(j):
        nonlocal cache
        new_cache, new_mass = tuning.refresh_center(
            run.adapt_window(j), model, data, prior
        )
        run.evals += n
        cache = new_cache
        tune_ab()
        refresh_randomness()
        return new_mass

    def estimate_scalars():
        e = ps["est"]
        return dict(ell_hat=e.log_abs, sigma2_hat=np.nan)

    def on_freeze():
        # re-tune the bound and Poisson mean against the converged chain,
        # then hand the sampling phase over to the signed target
        tune_ab()
        refresh_randomness()
        ps["signed"] = True

    run.estimate_scalars = estimate_scalars
    return _driver_loop(
        run, step1, make_closures, on_theta_accept, refresh,
        sign_fn=lambda: ps["est"].sign, on_freeze=on_freeze,
    )


def stats_poisson_ppf(z, mu):
    from scipy import stats

    q = min(stats.norm.cdf(z), 1.0 - 1e-16)
    return stats.poisson.ppf(q, mu)
