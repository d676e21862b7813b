"""Run configuration: a flat key = value file format with CLI overrides.

A resolved copy of every run's configuration (including defaults and the
seed) is written into the output directory, so any artifact can be
reproduced from its own output folder.
"""

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


@dataclass
class RunConfig:
    mode: str = "hmc-ecs"  # hmc | hmc-ecs | hmc-ecs-poisson
    model: str = "logistic"
    data_path: str = None
    out_dir: str = None
    seed: int = 0
    chains: int = 1

    # synthetic data source, used when data_path is unset
    synth_n: int = None
    synth_d: int = None
    synth_seed: int = 0
    synth_theta: np.ndarray = None  # defaults to zeros

    # sampler size
    m: int = 1000
    g: int = 20
    n_train: int = 1000
    n_samples: int = 1000
    thin: int = 1
    u_updates: int = 1
    cyclic_blocks: bool = False

    # tuning
    eps: float = None  # None -> doubling/halving initialization
    traj_length: float = 2.0
    pilot: bool = False
    delta: float = 0.8
    mass: str = "hessian"  # hessian | identity
    refresh_every: int = 100
    window_frac: float = 0.1
    jitter_l: bool = False
    divergence_threshold: float = 1000.0

    # model
    lam: float = 0.1
    theta0: np.ndarray = None

    # Poisson variant
    mu: float = None
    m_b: int = 100
    a: float = None
    a_c: float = 3.0
    rho: float = 0.99

    def validate(self, n=None):
        if self.mode not in ("hmc", "hmc-ecs", "hmc-ecs-poisson"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.n_train < 0 or self.n_samples < 0:
            raise ConfigError("iteration counts must be >= 0")
        if self.n_train + self.n_samples < 1:
            raise ConfigError("no iterations requested")
        if self.mode == "hmc-ecs":
            if self.m < 1 or self.g < 1:
                raise ConfigError("m and G must be >= 1")
            if self.m % self.g != 0:
                raise ConfigError(f"m must be divisible by G (m={self.m}, G={self.g})")
            if n is not None and self.m > n:
                raise ConfigError(f"m={self.m} exceeds n={n}")
        if self.mode == "hmc-ecs-poisson":
            if self.m_b < 1:
                raise ConfigError("m_b must be >= 1")
            if self.mu is not None and not self.mu > 0:
                raise ConfigError("mu must be positive")
            if not abs(self.rho) < 1:
                raise ConfigError("|rho| must be < 1")
        if self.eps is not None and not self.eps > 0:
            raise ConfigError("eps must be positive")
        if not self.traj_length > 0:
            raise ConfigError("trajectory length must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must be in (0, 1)")
        if not self.lam > 0:
            raise ConfigError("lam must be positive")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.mass not in ("hessian", "identity"):
            raise ConfigError(f"unknown mass option {self.mass!r}")
        if self.data_path is not None and not Path(self.data_path).exists():
            raise ConfigError(f"data file not found: {self.data_path}")
        if self.data_path is None and (self.synth_n is None or self.synth_d is None):
            raise ConfigError("either data_path or synth_n/synth_d is required")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        return self


_BOOL_FIELDS = {"pilot", "cyclic_blocks", "jitter_l"}
_INT_FIELDS = {
    "seed", "m", "g", "n_train", "n_samples", "thin", "u_updates",
    "refresh_every", "m_b", "chains", "synth_n", "synth_d", "synth_seed",
}
_FLOAT_FIELDS = {
    "eps", "traj_length", "delta", "window_frac", "divergence_threshold",
    "lam", "mu", "a", "a_c", "rho",
}


def _parse_value(key, raw):
    raw = raw.strip()
    if raw.lower() in ("none", ""):
        return None
    if key in _BOOL_FIELDS:
        return raw.lower() in ("1", "true", "yes", "on")
    if key in _INT_FIELDS:
        return int(raw)
    if key in _FLOAT_FIELDS:
        return float(raw)
    if key in ("theta0", "synth_theta"):
        return np.array([float(v) for v in raw.split(",")])
    return raw


def parse_config_file(path):
    """Flat ``key = value`` lines; '#' starts a comment."""
    valid = {f.name for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in valid:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}")
    return out


def make_config(file_path=None, overrides=None):
    """Config file values first, then CLI overrides (flags win)."""
    values = {}
    if file_path is not None:
        values.update(parse_config_file(file_path))
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc))


def resolved_text(config):
    lines = []
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if isinstance(value, np.ndarray):
            value = ",".join("%.17g" % v for v in value)
        elif isinstance(value, float):
            value = "%.17g" % value
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif value is None:
            value = "none"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
