"""Gibbs Step 1: block Metropolis-Hastings update of the subsample indices.

The m indices live in G contiguous blocks of size m/G. Per-block partial
sums of the residuals e_{u_i} (and their squares) are maintained
incrementally so that one Step-1 proposal costs O(m/G * d) instead of
O(m * d); the sums are recomputed from scratch periodically to bound
floating-point drift.
"""

import numpy as np

from .control_variates import sum_q
from .estimators import LogLikEstimate, _u_fingerprint
from .model import DomainError

#: Step-1 calls between from-scratch recomputations of the partial sums.
FULL_RECOMPUTE_PERIOD = 10_000


class SubsampleConsistencyError(RuntimeError):
    """The stored estimate no longer matches (theta, u)."""


class SubsampleState:
    """Mutable per-chain subsample state. Single writer per chain."""

    def __init__(self, model, cache, data, theta, m, g, rng):
        if m < 1 or g < 1:
            raise DomainError("m and G must be >= 1")
        if m % g != 0:
            raise DomainError(f"m must be divisible by G (got m={m}, G={g})")
        if m > data.n:
            raise DomainError(f"m={m} exceeds n={data.n}")
        self.model = model
        self.cache = cache
        self.data = data
        self.m = m
        self.g = g
        self.block_size = m // g
        self.u = rng.integers(0, data.n, size=m, dtype=np.int64)
        self.block_cursor = 0
        self.steps_since_recompute = 0
        self.refresh_theta(theta)

    # -- bookkeeping --------------------------------------------------------

    def _block_slice(self, b):
        return slice(b * self.block_size, (b + 1) * self.block_size)

    def _recompute_sums(self, theta):
        e = self.model.residuals(self.data, theta, self.cache.theta_star, self.u)
        blocks = e.reshape(self.g, self.block_size)
        self.block_sum_e = blocks.sum(axis=1)
        self.block_sum_e2 = (blocks * blocks).sum(axis=1)
        self.steps_since_recompute = 0

    def refresh_theta(self, theta):
        """Recompute all per-block partials at a new theta (or new cache)."""
        self.theta = np.array(theta, dtype=np.float64, copy=True)
        self._recompute_sums(self.theta)

    def refresh_cache(self, cache):
        self.cache = cache
        self._recompute_sums(self.theta)

    def _estimate_from(self, sum_e, sum_e2, u=None):
        n, m = self.data.n, self.m
        ell = sum_q(self.cache, self.theta) + (n / m) * sum_e
        sigma2 = (n ** 2 / m ** 2) * max(0.0, sum_e2 - sum_e ** 2 / m)
        return LogLikEstimate(
            ell_hat=float(ell),
            sigma2_hat=float(sigma2),
            u_fingerprint=_u_fingerprint(self.u if u is None else u),
        )

    @property
    def estimate(self):
        return self._estimate_from(self.block_sum_e.sum(), self.block_sum_e2.sum())

    def check_theta(self, theta):
        if not np.array_equal(np.asarray(theta, dtype=np.float64), self.theta):
            raise SubsampleConsistencyError(
                "subsample estimate was computed at a different theta"
            )


def propose_block(state, rng, cyclic=False):
    """Redraw one block of indices i.i.d. uniform; returns (u_prime, block id)
    without mutating the state."""
    if cyclic:
        b = state.block_cursor
    else:
        b = int(rng.integers(state.g))
    u_prime = state.u.copy()
    u_prime[state._block_slice(b)] = rng.integers(
        0, state.data.n, size=state.block_size, dtype=np.int64
    )
    return u_prime, b


def gibbs_update_u(state, theta, rng, cyclic=False):
    """One block-MH update of u at fixed theta. Mutates the state; returns
    (accepted, alpha)."""
    state.check_theta(theta)
    if state.steps_since_recompute >= FULL_RECOMPUTE_PERIOD:
        state._recompute_sums(state.theta)

    if cyclic:
        b = state.block_cursor
        state.block_cursor = (state.block_cursor + 1) % state.g
    else:
        b = int(rng.integers(state.g))
    new_idx = rng.integers(0, state.data.n, size=state.block_size, dtype=np.int64)
    e_new = state.model.residuals(
        state.data, state.theta, state.cache.theta_star, new_idx
    )
    new_sum_e = e_new.sum()
    new_sum_e2 = e_new @ e_new

    tot_e = state.block_sum_e.sum()
    tot_e2 = state.block_sum_e2.sum()
    cur = state._estimate_from(tot_e, tot_e2)
    prop_sum_e = tot_e - state.block_sum_e[b] + new_sum_e
    prop_sum_e2 = tot_e2 - state.block_sum_e2[b] + new_sum_e2
    prop = state._estimate_from(prop_sum_e, prop_sum_e2)

    log_ratio = (prop.ell_hat - 0.5 * prop.sigma2_hat) - (
        cur.ell_hat - 0.5 * cur.sigma2_hat
    )
    alpha = 1.0 if log_ratio >= 0 else float(np.exp(log_ratio))
    accepted = rng.random() < alpha
    if accepted:
        state.u[state._block_slice(b)] = new_idx
        state.block_sum_e[b] = new_sum_e
        state.block_sum_e2[b] = new_sum_e2
    state.steps_since_recompute += 1
    return bool(accepted), float(alpha)
