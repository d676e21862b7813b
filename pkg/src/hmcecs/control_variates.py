"""Second-order Taylor control variates around a center theta*.

The cache holds the full-data summaries that make Sum_k q_k(theta) and
Sum_k grad q_k(theta) an O(d^2) evaluation:

    ell_sum_star = Sum_k l_k(theta*)
    A            = Sum_k grad l_k(theta*)
    B            = Sum_k H_k(theta*)

Per-observation proxy ingredients for sampled indices are recomputed on
demand from theta* rather than stored for all n observations.
"""

import struct
import time
from dataclasses import dataclass

import numpy as np

from .model import DomainError, _check_theta

#: B is stored dense; beyond this dimension we refuse rather than
#: silently approximate.
DEFAULT_MAX_DIM = 512

_MAGIC = b"HMCECSCV"
_VERSION = 1


class CacheMismatchError(RuntimeError):
    """The cache was built on a different dataset than the one supplied."""


@dataclass(frozen=True)
class ControlVariateCache:
    theta_star: np.ndarray
    ell_sum_star: float
    a: np.ndarray  # (d,)
    b: np.ndarray  # (d, d)
    fingerprint: str
    built_at: float

    @property
    def d(self):
        return self.theta_star.shape[0]

    def check(self, data):
        if self.fingerprint != data.fingerprint():
            raise CacheMismatchError(
                "control-variate cache fingerprint does not match the dataset"
            )


def build_cache(model, data, theta_star, max_dim=DEFAULT_MAX_DIM):
    """One full pass over the data; exact sums."""
    theta_star = _check_theta(theta_star)
    if data.d > max_dim:
        raise DomainError(
            f"dense Hessian summaries limited to d <= {max_dim}, got d = {data.d}"
        )
    ell_sum, a, b = model.center_summaries(data, theta_star)
    if not (np.isfinite(ell_sum) and np.isfinite(a).all() and np.isfinite(b).all()):
        # locate the first offending observation for the error message
        for k in range(data.n):
            vals = model.loglik(data, theta_star, np.int64([k]))
            g = model.grad(data, theta_star, np.int64([k]))
            if not (np.isfinite(vals).all() and np.isfinite(g).all()):
                raise DomainError(
                    f"non-finite likelihood summary at observation index {k}"
                )
        raise DomainError("non-finite accumulation in control-variate summaries")
    scale = np.abs(b).max()
    if scale > 0 and np.abs(b - b.T).max() > 1e-12 * scale:
        raise DomainError("Hessian summary B is not symmetric")
    b = 0.5 * (b + b.T)
    return ControlVariateCache(
        theta_star=theta_star,
        ell_sum_star=float(ell_sum),
        a=a,
        b=b,
        fingerprint=data.fingerprint(),
        built_at=time.time(),
    )


def q(cache, model, data, theta, k):
    """Per-observation proxy values q_k(theta); k may be a scalar index or
    an index array."""
    vals = model.proxies(data, theta, cache.theta_star, np.atleast_1d(k))
    return float(vals[0]) if np.isscalar(k) else vals


def sum_q(cache, theta):
    delta = np.asarray(theta, dtype=np.float64) - cache.theta_star
    return float(cache.ell_sum_star + cache.a @ delta + 0.5 * delta @ cache.b @ delta)


def sum_grad_q(cache, theta):
    delta = np.asarray(theta, dtype=np.float64) - cache.theta_star
    return cache.a + cache.b @ delta


# ---------------------------------------------------------------------------
# binary sidecar serialization (versioned header, little-endian doubles)


def save_cache(path, cache):
    d = cache.d
    fp = cache.fingerprint.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<iiq d", _VERSION, d, len(fp), cache.built_at))
        fh.write(fp)
        fh.write(struct.pack("<d", cache.ell_sum_star))
        fh.write(cache.theta_star.astype("<f8").tobytes())
        fh.write(cache.a.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(cache.b).astype("<f8").tobytes())


def load_cache(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DomainError(f"{path}: not a control-variate cache file")
        version, d, fplen, built_at = struct.unpack("<iiq d", fh.read(24))
        if version != _VERSION:
            raise DomainError(f"{path}: unsupported cache version {version}")
        fp = fh.read(fplen).decode("ascii")
        (ell_sum_star,) = struct.unpack("<d", fh.read(8))
        theta_star = np.frombuffer(fh.read(8 * d), dtype="<f8").astype(np.float64)
        a = np.frombuffer(fh.read(8 * d), dtype="<f8").astype(np.float64)
        b = np.frombuffer(fh.read(8 * d * d), dtype="<f8").astype(np.float64)
    return ControlVariateCache(
        theta_star=theta_star,
        ell_sum_star=ell_sum_star,
        a=a,
        b=b.reshape(d, d),
        fingerprint=fp,
        built_at=built_at,
    )
