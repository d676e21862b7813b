"""Step-size and mass-matrix adaptation.

Dual averaging drives the step size toward a target acceptance rate
during the training phase; the mass matrix is the negative log-posterior
Hessian at a periodically refreshed center theta*, which also triggers a
control-variate cache rebuild. Everything is frozen after training.
"""

from dataclasses import dataclass, field

import numpy as np

from .control_variates import build_cache
from .model import DomainError


class AdaptationError(RuntimeError):
    """Adaptation collapsed (non-SPD mass matrix, vanishing step size...)."""


@dataclass
class DualAveragingState:
    """Dual-averaging recursion for log step size.

    Constants gamma/t0/kappa are the standard defaults of the cited
    scheme; only the target acceptance delta is taken from the method's
    published settings (delta = 0.8).
    """

    eps0: float
    delta: float = 0.8
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    t: int = 0
    mu_anchor: float = field(init=False)
    x: float = field(init=False)  # log eps
    x_bar: float = field(init=False)
    h_bar: float = 0.0

    def __post_init__(self):
        if not (self.gamma > 0 and self.t0 >= 0 and 0.5 < self.kappa <= 1.0):
            raise DomainError("invalid dual-averaging constants")
        if not 0.0 < self.delta < 1.0:
            raise DomainError("target acceptance delta must be in (0, 1)")
        self.mu_anchor = np.log(10.0 * self.eps0)
        self.x = np.log(self.eps0)
        self.x_bar = np.log(self.eps0)

    @property
    def eps(self):
        """Current (training-phase) step size."""
        return float(np.exp(self.x))

    @property
    def eps_frozen(self):
        """Averaged step size, used once adaptation stops."""
        return float(np.exp(self.x_bar))


def da_update(state, alpha):
    """One dual-averaging step given the observed acceptance probability."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"acceptance probability {alpha} outside [0, 1]")
    state.t += 1
    t = state.t
    w = 1.0 / (t + state.t0)
    state.h_bar = (1.0 - w) * state.h_bar + w * (state.delta - alpha)
    state.x = state.mu_anchor - np.sqrt(t) / state.gamma * state.h_bar
    eta = t ** (-state.kappa)
    state.x_bar = eta * state.x + (1.0 - eta) * state.x_bar
    return state


def spd_jitter(m):
    """Return an SPD-repaired copy of m, adding escalating diagonal jitter
    until the Cholesky factorization succeeds."""
    m = 0.5 * (m + m.T)
    if not np.isfinite(m).all():
        raise AdaptationError("mass matrix has non-finite entries")
    try:
        np.linalg.cholesky(m)
        return m
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-8 * (1.0 + np.abs(np.diag(m)).max())
    eye = np.eye(m.shape[0])
    for _ in range(10):
        try:
            np.linalg.cholesky(m + jitter * eye)
            return m + jitter * eye
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise AdaptationError("mass matrix not positive definite after 10 jitter steps")


def refresh_center(window, model, data, prior):
    """New center theta* = mean of the window's draws; rebuilds the
    control-variate cache there and returns it with the mass matrix
    M = -(B(theta*) - lam^2 I), the negative log-posterior Hessian."""
    window = np.atleast_2d(np.asarray(window, dtype=np.float64))
    if window.shape[0] < 1:
        raise DomainError("empty adaptation window")
    theta_star = window.mean(axis=0)
    cache = build_cache(model, data, theta_star)
    m_matrix = spd_jitter(-(cache.b + prior.hess_log_density(data.d)))
    return cache, m_matrix


def find_initial_step_size(theta0, potential_fn, grad_fn, m_matrix, rng, target=0.5):
    """Doubling/halving heuristic: adjust eps until the one-step leapfrog
    acceptance ratio crosses the target."""
    from .hmc import HamiltonianSpec, PhasePoint, leapfrog

    theta0 = np.asarray(theta0, dtype=np.float64)
    eps = 1.0
    spec = HamiltonianSpec(m_matrix, eps, 1)
    p0 = spec.sample_momentum(rng)
    u0 = potential_fn(theta0)

    def log_ratio(eps):
        s = HamiltonianSpec(m_matrix, eps, 1)
        end, diverged, _ = leapfrog(s, PhasePoint(theta0, p0), grad_fn)
        if diverged:
            return -np.inf
        h0 = u0 + s.kinetic(p0)
        h1 = potential_fn(end.theta) + s.kinetic(end.p)
        return -(h1 - h0)

    r = log_ratio(eps)
    direction = 1.0 if r > np.log(target) else -1.0
    for _ in range(100):
        eps *= 2.0 ** direction
        r = log_ratio(eps)
        if direction > 0 and r <= np.log(target):
            break
        if direction < 0 and r >= np.log(target):
            break
    else:
        raise AdaptationError("initial step-size search did not terminate")
    if not eps > 0:
        raise AdaptationError("initial step-size search collapsed to zero")
    return eps


def pilot_trajectory_length(
    potential_fn,
    grad_fn,
    theta0,
    m_matrix,
    grid=(0.5, 1.0, 2.0, 4.0),
    eps=0.05,
    iters=200,
    seed=0,
    cost_per_grad=1.0,
):
    """Short pilot runs over a grid of trajectory lengths; picks the one
    maximizing estimated ESS per gradient evaluation. Deterministic given
    the seed."""
    from .diagnostics import ess
    from .hmc import HamiltonianSpec, hmc_step

    grid = [float(v) for v in grid]
    if not grid:
        raise DomainError("empty trajectory-length grid")
    theta0 = np.asarray(theta0, dtype=np.float64)
    d = theta0.shape[0]
    best = None
    for traj in grid:
        rng = np.random.default_rng(seed)
        l_steps = max(1, int(round(traj / eps)))
        spec = HamiltonianSpec(m_matrix, eps, l_steps)
        theta = theta0.copy()
        u_val = potential_fn(theta)
        draws = np.empty((iters, d))
        n_accept = 0
        for j in range(iters):
            theta, u_val, accepted, _, _, diverged = hmc_step(
                theta, u_val, potential_fn, grad_fn, spec, rng
            )
            n_accept += accepted and not diverged
            draws[j] = theta
        if n_accept == 0:
            continue
        try:
            ess_min = min(ess(draws[iters // 4 :, j]) for j in range(d))
        except DomainError:
            continue
        score = ess_min / (iters * (l_steps + 1) * cost_per_grad)
        if best is None or score > best[1]:
            best = (traj, score)
    if best is None:
        raise AdaptationError(
            "all trajectory-length pilots diverged; set the length manually"
        )
    return best[0]
