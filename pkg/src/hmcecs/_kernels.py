"""Hot numeric kernels for the logistic model.

Every kernel exists in two variants: a pure-numpy implementation and a
numba ``@njit`` one. The numba path is used when numba imports cleanly and
the environment variable ``HMCECS_NO_NUMBA`` is unset/0; otherwise the
numpy path is selected. Both paths are deterministic (fixed summation
order within the numba loops, fixed chunking in the numpy reductions) and
agree to ~1e-12 relative.

Model convention throughout: P(y=1 | x) = 1 / (1 + exp(x'theta)), so the
per-observation log-likelihood is l(z, y) with z = x'theta:

    l(z, 1) = -log(1 + exp(z)),   l(z, 0) = -log(1 + exp(-z))

d l/dz = (1 - y) - s(z) and d^2 l/dz^2 = -s(z)(1 - s(z)) with s the
standard logistic sigmoid.
"""

import os

import numpy as np

# Chunk size for the ordered full-data reductions; fixed so that results
# are bit-reproducible regardless of array layout.
CHUNK = 65536

NUMBA_ENABLED = os.environ.get("HMCECS_NO_NUMBA", "0").lower() not in (
    "1",
    "true",
    "yes",
)
if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False


# ---------------------------------------------------------------------------
# numpy implementations


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def _loglik_z(z, y):
    # l = -(max(s,0) + log1p(exp(-|s|))) with s = z for y=1, -z for y=0;
    # exact and overflow-free for any |z|.
    s = np.where(y > 0.5, z, -z)
    return -(np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s))))


def _np_point_loglik(x, y, u, theta):
    xg, yg = x[u], y[u]
    return _loglik_z(xg @ theta, yg)


def _np_point_grads(x, y, u, theta):
    xg, yg = x[u], y[u]
    dldz = (1.0 - yg) - _sigmoid(xg @ theta)
    return xg * dldz[:, None]


def _np_loglik_grad_sum(x, y, theta):
    n, d = x.shape
    ell = 0.0
    grad = np.zeros(d)
    for lo in range(0, n, CHUNK):
        xc, yc = x[lo : lo + CHUNK], y[lo : lo + CHUNK]
        z = xc @ theta
        ell += _loglik_z(z, yc).sum()
        grad += xc.T @ ((1.0 - yc) - _sigmoid(z))
    return ell, grad


def _np_center_summaries(x, y, theta_star):
    n, d = x.shape
    ell_sum = 0.0
    a = np.zeros(d)
    b = np.zeros((d, d))
    for lo in range(0, n, CHUNK):
        xc, yc = x[lo : lo + CHUNK], y[lo : lo + CHUNK]
        z = xc @ theta_star
        sig = _sigmoid(z)
        ell_sum += _loglik_z(z, yc).sum()
        a += xc.T @ ((1.0 - yc) - sig)
        b += (xc * (-sig * (1.0 - sig))[:, None]).T @ xc
    return ell_sum, a, b


def _np_scalar_terms(x, y, u, theta, theta_star):
    """Per-point pieces shared by the proxy/residual kernels."""
    xg, yg = x[u], y[u]
    z = xg @ theta
    zs = xg @ theta_star
    sig_s = _sigmoid(zs)
    dz = z - zs
    q = _loglik_z(zs, yg) + ((1.0 - yg) - sig_s) * dz - 0.5 * sig_s * (1.0 - sig_s) * dz ** 2
    return xg, yg, z, zs, sig_s, dz, q


def _np_proxies(x, y, u, theta, theta_star):
    return _np_scalar_terms(x, y, u, theta, theta_star)[-1]


def _np_residuals(x, y, u, theta, theta_star):
    _, yg, z, _, _, _, q = _np_scalar_terms(x, y, u, theta, theta_star)
    return _loglik_z(z, yg) - q


def _np_residual_dz(x, y, u, theta, theta_star):
    xg, yg, z, zs, sig_s, dz, _ = _np_scalar_terms(x, y, u, theta, theta_star)
    # d e/dz per point: dl/dz(z) - dq/dz = -s(z) + s(zs) + s(zs)(1-s(zs)) dz
    return xg, -_sigmoid(z) + sig_s + sig_s * (1.0 - sig_s) * dz


def _np_residual_grad_sum(x, y, u, theta, theta_star):
    xg, r = _np_residual_dz(x, y, u, theta, theta_star)
    return xg.T @ r


def _np_residual_grads(x, y, u, theta, theta_star):
    xg, r = _np_residual_dz(x, y, u, theta, theta_star)
    return xg * r[:, None]


# ---------------------------------------------------------------------------
# numba implementations

if NUMBA_ENABLED:

    @njit(cache=True)
    def _sig1(t):
        if t >= 0.0:
            return 1.0 / (1.0 + np.exp(-t))
        e = np.exp(t)
        return e / (1.0 + e)

    @njit(cache=True)
    def _ll1(z, y):
        s = z if y > 0.5 else -z
        if s > 0.0:
            return -(s + np.log1p(np.exp(-s)))
        return -np.log1p(np.exp(s))

    @njit(cache=True)
    def _nb_point_loglik(x, y, u, theta):
        m = u.shape[0]
        d = theta.shape[0]
        out = np.empty(m)
        for i in range(m):
            k = u[i]
            z = 0.0
            for j in range(d):
                z += x[k, j] * theta[j]
            out[i] = _ll1(z, y[k])
        return out

    @njit(cache=True)
    def _nb_loglik_grad_sum(x, y, theta):
        n, d = x.shape
        ell = 0.0
        grad = np.zeros(d)
        for k in range(n):
            z = 0.0
            for j in range(d):
                z += x[k, j] * theta[j]
            ell += _ll1(z, y[k])
            dldz = (1.0 - y[k]) - _sig1(z)
            for j in range(d):
                grad[j] += dldz * x[k, j]
        return ell, grad

    @njit(cache=True)
    def _nb_center_summaries(x, y, theta_star):
        n, d = x.shape
        ell_sum = 0.0
        a = np.zeros(d)
        b = np.zeros((d, d))
        for k in range(n):
            z = 0.0
            for j in range(d):
                z += x[k, j] * theta_star[j]
            ell_sum += _ll1(z, y[k])
            sig = _sig1(z)
            dldz = (1.0 - y[k]) - sig
            c = -sig * (1.0 - sig)
            for j in range(d):
                a[j] += dldz * x[k, j]
                cxj = c * x[k, j]
                for jj in range(d):
                    b[j, jj] += cxj * x[k, jj]
        return ell_sum, a, b

    @njit(cache=True)
    def _nb_proxies(x, y, u, theta, theta_star):
        m = u.shape[0]
        d = theta.shape[0]
        out = np.empty(m)
        for i in range(m):
            k = u[i]
            z = 0.0
            zs = 0.0
            for j in range(d):
                z += x[k, j] * theta[j]
                zs += x[k, j] * theta_star[j]
            sig_s = _sig1(zs)
            dz = z - zs
            out[i] = (
                _ll1(zs, y[k])
                + ((1.0 - y[k]) - sig_s) * dz
                - 0.5 * sig_s * (1.0 - sig_s) * dz * dz
            )
        return out

    @njit(cache=True)
    def _nb_residuals(x, y, u, theta, theta_star):
        m = u.shape[0]
        d = theta.shape[0]
        out = np.empty(m)
        for i in range(m):
            k = u[i]
            z = 0.0
            zs = 0.0
            for j in range(d):
                z += x[k, j] * theta[j]
                zs += x[k, j] * theta_star[j]
            sig_s = _sig1(zs)
            dz = z - zs
            q = (
                _ll1(zs, y[k])
                + ((1.0 - y[k]) - sig_s) * dz
                - 0.5 * sig_s * (1.0 - sig_s) * dz * dz
            )
            out[i] = _ll1(z, y[k]) - q
        return out

    @njit(cache=True)
    def _nb_residual_grad_sum(x, y, u, theta, theta_star):
        m = u.shape[0]
        d = theta.shape[0]
        out = np.zeros(d)
        for i in range(m):
            k = u[i]
            z = 0.0
            zs = 0.0
            for j in range(d):
                z += x[k, j] * theta[j]
                zs += x[k, j] * theta_star[j]
            sig_s = _sig1(zs)
            r = -_sig1(z) + sig_s + sig_s * (1.0 - sig_s) * (z - zs)
            for j in range(d):
                out[j] += r * x[k, j]
        return out

    @njit(cache=True)
    def _nb_residual_grads(x, y, u, theta, theta_star):
        m = u.shape[0]
        d = theta.shape[0]
        out = np.empty((m, d))
        for i in range(m):
            k = u[i]
            z = 0.0
            zs = 0.0
            for j in range(d):
                z += x[k, j] * theta[j]
                zs += x[k, j] * theta_star[j]
            sig_s = _sig1(zs)
            r = -_sig1(z) + sig_s + sig_s * (1.0 - sig_s) * (z - zs)
            for j in range(d):
                out[i, j] = r * x[k, j]
        return out


# ---------------------------------------------------------------------------
# dispatch

if NUMBA_ENABLED:
    point_loglik = _nb_point_loglik
    loglik_grad_sum = _nb_loglik_grad_sum
    center_summaries = _nb_center_summaries
    proxies = _nb_proxies
    residuals = _nb_residuals
    residual_grad_sum = _nb_residual_grad_sum
    residual_grads = _nb_residual_grads
else:
    point_loglik = _np_point_loglik
    loglik_grad_sum = _np_loglik_grad_sum
    center_summaries = _np_center_summaries
    proxies = _np_proxies
    residuals = _np_residuals
    residual_grad_sum = _np_residual_grad_sum
    residual_grads = _np_residual_grads

# point_grads is only used for small-scale derivative checks; numpy is fine.
point_grads = _np_point_grads
