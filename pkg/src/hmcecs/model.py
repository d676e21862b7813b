"""Data model: logistic likelihood, Gaussian prior, splines, synthetic data.

Sign convention (deliberate, and the reverse of the common ML one):

    P(y = 1 | x, theta) = 1 / (1 + exp(x' theta))

so a coefficient that increases x'theta *decreases* the probability of
y = 1. All likelihood code in this package follows this convention.
"""

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class DomainError(ValueError):
    """Raised when an operation is called with invalid inputs."""


@dataclass(frozen=True)
class Dataset:
    """Immutable design matrix + binary responses."""

    x: np.ndarray  # (n, d) float64
    y: np.ndarray  # (n,) float64 in {0, 1}

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64))
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DomainError(f"x must be a nonempty 2-d matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DomainError(f"y has shape {y.shape}, expected ({x.shape[0]},)")
        if not np.isfinite(x).all():
            raise DomainError("non-finite entries in covariate matrix")
        if not np.isin(y, (0.0, 1.0)).all():
            raise DomainError("responses must all be 0 or 1")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    def fingerprint(self) -> str:
        """Cheap content hash: shape plus a strided sample of the entries."""
        h = hashlib.blake2b(digest_size=16)
        h.update(np.int64([self.n, self.d]).tobytes())
        step = max(1, self.n // 1024)
        h.update(self.x[::step].tobytes())
        h.update(self.y[::step].tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class Prior:
    """Zero-mean Gaussian prior N(0, I / lam^2)."""

    lam: float = 0.1

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError(f"shrinkage lam must be positive, got {self.lam}")

    def log_density(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        d = theta.shape[0]
        return (
            -0.5 * d * np.log(2.0 * np.pi)
            + d * np.log(self.lam)
            - 0.5 * self.lam ** 2 * theta @ theta
        )

    def grad_log_density(self, theta):
        return -self.lam ** 2 * np.asarray(theta, dtype=np.float64)

    def hess_log_density(self, d):
        return -self.lam ** 2 * np.eye(d)


def _check_theta(theta):
    theta = np.ascontiguousarray(np.asarray(theta, dtype=np.float64))
    if not np.isfinite(theta).all():
        raise DomainError("non-finite parameter vector")
    return theta


def _as_index_array(data, idx):
    if idx is None:
        return np.arange(data.n, dtype=np.int64)
    idx = np.ascontiguousarray(np.atleast_1d(np.asarray(idx, dtype=np.int64)))
    if idx.size == 0:
        raise DomainError("empty index set")
    if idx.min() < 0 or idx.max() >= data.n:
        raise DomainError("observation index out of range")
    return idx


class LogisticModel:
    """Per-observation logistic log-likelihood and its derivatives.

    All heavy paths delegate to the kernels in :mod:`hmcecs._kernels`.
    """

    name = "logistic"

    def loglik(self, data, theta, idx=None):
        theta = _check_theta(theta)
        u = _as_index_array(data, idx)
        return _kernels.point_loglik(data.x, data.y, u, theta)

    def grad(self, data, theta, idx=None):
        theta = _check_theta(theta)
        u = _as_index_array(data, idx)
        return _kernels.point_grads(data.x, data.y, u, theta)

    def hess(self, data, theta, idx=None):
        """Materialized rank-1 per-observation Hessians, (m, d, d)."""
        theta = _check_theta(theta)
        u = _as_index_array(data, idx)
        xg = data.x[u]
        sig = _kernels._sigmoid(xg @ theta)
        c = -sig * (1.0 - sig)
        return c[:, None, None] * (xg[:, :, None] * xg[:, None, :])

    def loglik_sum_grad(self, data, theta):
        theta = _check_theta(theta)
        return _kernels.loglik_grad_sum(data.x, data.y, theta)

    def center_summaries(self, data, theta_star):
        theta_star = _check_theta(theta_star)
        return _kernels.center_summaries(data.x, data.y, theta_star)

    def proxies(self, data, theta, theta_star, idx=None):
        theta = _check_theta(theta)
        u = _as_index_array(data, idx)
        return _kernels.proxies(data.x, data.y, u, theta, theta_star)

    def residuals(self, data, theta, theta_star, idx=None):
        theta = _check_theta(theta)
        u = _as_index_array(data, idx)
        return _kernels.residuals(data.x, data.y, u, theta, theta_star)

    def residual_grad_sum(self, data, theta, theta_star, idx=None):
        theta = _check_theta(theta)
        u = _as_index_array(data, idx)
        return _kernels.residual_grad_sum(data.x, data.y, u, theta, theta_star)

    def residual_grads(self, data, theta, theta_star, idx=None):
        theta = _check_theta(theta)
        u = _as_index_array(data, idx)
        return _kernels.residual_grads(data.x, data.y, u, theta, theta_star)


class QuadraticModel:
    """Gaussian pseudo-likelihood used for exact-proxy oracles.

    l_k(theta) = -w/2 ||theta - x_k||^2. The Hessian is the constant -w I,
    so second-order Taylor proxies reproduce l_k exactly and the subsample
    estimators collapse to the full-data quantities.
    """

    name = "quadratic"

    def __init__(self, weight=1.0):
        self.weight = float(weight)

    def loglik(self, data, theta, idx=None):
        theta = _check_theta(theta)
        u = _as_index_array(data, idx)
        diff = theta[None, :] - data.x[u]
        return -0.5 * self.weight * (diff * diff).sum(axis=1)

    def grad(self, data, theta, idx=None):
        theta = _check_theta(theta)
        u = _as_index_array(data, idx)
        return -self.weight * (theta[None, :] - data.x[u])

    def hess(self, data, theta, idx=None):
        u = _as_index_array(data, idx)
        return np.broadcast_to(
            -self.weight * np.eye(data.d), (u.shape[0], data.d, data.d)
        ).copy()

    def loglik_sum_grad(self, data, theta):
        ell = self.loglik(data, theta).sum()
        return ell, self.grad(data, theta).sum(axis=0)

    def center_summaries(self, data, theta_star):
        ell_sum = self.loglik(data, theta_star).sum()
        a = self.grad(data, theta_star).sum(axis=0)
        b = -self.weight * data.n * np.eye(data.d)
        return ell_sum, a, b

    def proxies(self, data, theta, theta_star, idx=None):
        # Exact for a quadratic log-likelihood.
        return self.loglik(data, theta, idx)

    def residuals(self, data, theta, theta_star, idx=None):
        u = _as_index_array(data, idx)
        return np.zeros(u.shape[0])

    def residual_grad_sum(self, data, theta, theta_star, idx=None):
        return np.zeros(data.d)

    def residual_grads(self, data, theta, theta_star, idx=None):
        u = _as_index_array(data, idx)
        return np.zeros((u.shape[0], data.d))


class LinearProxyQuadraticModel(QuadraticModel):
    """Quadratic likelihood with first-order (linear-only) proxies.

    Deliberately imperfect control variates: the quadratic curvature term
    is dropped from q_k, so subsample estimators are noisy. Used to probe
    the perturbed target on small instances.
    """

    name = "quadratic-linear-proxy"

    def proxies(self, data, theta, theta_star, idx=None):
        u = _as_index_array(data, idx)
        delta = np.asarray(theta, dtype=np.float64) - theta_star
        return self.loglik(data, theta_star, u) + self.grad(data, theta_star, u) @ delta

    def residuals(self, data, theta, theta_star, idx=None):
        u = _as_index_array(data, idx)
        return self.loglik(data, theta, u) - self.proxies(data, theta, theta_star, u)

    def residual_grads(self, data, theta, theta_star, idx=None):
        u = _as_index_array(data, idx)
        return self.grad(data, theta, u) - self.grad(data, theta_star, u)

    def residual_grad_sum(self, data, theta, theta_star, idx=None):
        return self.residual_grads(data, theta, theta_star, idx).sum(axis=0)

    def center_summaries(self, data, theta_star):
        ell_sum = self.loglik(data, theta_star).sum()
        a = self.grad(data, theta_star).sum(axis=0)
        return ell_sum, a, np.zeros((data.d, data.d))


MODELS = {
    "logistic": LogisticModel,
    "quadratic": QuadraticModel,
    "quadratic-linear-proxy": LinearProxyQuadraticModel,
}


def make_model(name):
    try:
        return MODELS[name]()
    except KeyError:
        raise DomainError(f"unknown model {name!r}; choose from {sorted(MODELS)}")


# ---------------------------------------------------------------------------
# point-wise convenience wrappers


def loglik_point(model, data, theta, k):
    return float(model.loglik(data, theta, np.int64([k]))[0])


def grad_loglik_point(model, data, theta, k):
    return model.grad(data, theta, np.int64([k]))[0]


def hess_loglik_point(model, data, theta, k):
    return model.hess(data, theta, np.int64([k]))[0]


# ---------------------------------------------------------------------------
# spline basis


@dataclass(frozen=True)
class SplineSpec:
    """Truncated-linear spline basis: per covariate, a linear term plus
    max(x - knot, 0) columns for each knot."""

    knots: tuple  # per covariate: tuple of ascending knot locations

    def __post_init__(self):
        knots = tuple(tuple(float(v) for v in ks) for ks in self.knots)
        for j, ks in enumerate(knots):
            if any(b <= a for a, b in zip(ks, ks[1:])):
                raise DomainError(f"knots for covariate {j} not strictly increasing")
        object.__setattr__(self, "knots", knots)

    @classmethod
    def from_quantiles(cls, x_raw, knots_per_covariate=10):
        """Knots at equally spaced empirical quantiles (interior only)."""
        x_raw = np.atleast_2d(np.asarray(x_raw, dtype=np.float64))
        probs = np.linspace(0.0, 1.0, knots_per_covariate + 2)[1:-1]
        knots = []
        for j in range(x_raw.shape[1]):
            qs = np.quantile(x_raw[:, j], probs)
            # drop duplicate quantiles so the basis stays full rank
            ks = [qs[0]]
            for q in qs[1:]:
                if q > ks[-1]:
                    ks.append(q)
            knots.append(tuple(ks))
        return cls(tuple(knots))


def expand_splines(x_raw, y, spec):
    """Expand raw covariates to (intercept, then per covariate: linear term,
    then truncated-linear knot columns in ascending knot order)."""
    x_raw = np.atleast_2d(np.asarray(x_raw, dtype=np.float64))
    n, p = x_raw.shape
    if len(spec.knots) != p:
        raise DomainError(
            f"spec covers {len(spec.knots)} covariates, data has {p}"
        )
    cols = [np.ones(n)]
    for j in range(p):
        xj = x_raw[:, j]
        cols.append(xj)
        for kappa in spec.knots[j]:
            if kappa < xj.min() or kappa > xj.max():
                warnings.warn(
                    f"knot {kappa} outside observed range of covariate {j}",
                    stacklevel=2,
                )
            cols.append(np.maximum(xj - kappa, 0.0))
    return Dataset(np.column_stack(cols), y)


# ---------------------------------------------------------------------------
# synthetic data + CSV I/O


def generate_synthetic(n, d, theta_true, seed):
    """Standard-normal covariates (intercept first), responses from the
    logistic likelihood at theta_true. Bit-reproducible from seed."""
    if n < 1 or d < 1:
        raise DomainError("n and d must be >= 1")
    theta_true = _check_theta(theta_true)
    if theta_true.shape != (d,):
        raise DomainError(f"theta_true has shape {theta_true.shape}, expected ({d},)")
    rng = np.random.default_rng(seed)
    x = np.empty((n, d))
    x[:, 0] = 1.0
    if d > 1:
        x[:, 1:] = rng.standard_normal((n, d - 1))
    p1 = _kernels._sigmoid(-(x @ theta_true))  # P(y=1) = 1/(1+e^z) = s(-z)
    y = (rng.random(n) < p1).astype(np.float64)
    return Dataset(x, y)


def load_csv(path):
    """Read a dataset CSV: header row, a 0/1 column named 'y', remaining
    numeric columns are covariates in file order."""
    import pandas as pd

    frame = pd.read_csv(path, float_precision="round_trip")
    if "y" not in frame.columns:
        raise DomainError(f"{path}: no column named 'y'")
    y = frame["y"].to_numpy(dtype=np.float64)
    x = frame.drop(columns=["y"]).to_numpy(dtype=np.float64)
    return Dataset(x, y)


def save_csv(path, data, covariate_names=None):
    import pandas as pd

    names = covariate_names or [f"x{j}" for j in range(data.d)]
    frame = pd.DataFrame(data.x, columns=names)
    frame["y"] = data.y.astype(np.int64)
    frame.to_csv(path, index=False, float_format="%.17g")
