"""Trajectory discretization, skip-connection coefficients and the noising operator.

Levels are indexed 1..N in the public helpers that take a trajectory index
(``NoiseSchedule.level``); the underlying array is 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, DimensionError, DomainError


@dataclass(frozen=True)
class ScheduleConfig:
    epsilon: float = 0.02
    T: float = 80.0
    rho: float = 7.0
    N: int = 50
    sigma_data: float = 0.5

    def __post_init__(self) -> None:
        for name in ("epsilon", "T", "rho", "sigma_data"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ConfigurationError(f"{name} must be a positive finite number, got {value!r}")
        if int(self.N) != self.N or self.N < 2:
            raise ConfigurationError(f"N must be an integer >= 2, got {self.N!r}")
        if self.epsilon >= self.T:
            raise ConfigurationError(f"epsilon ({self.epsilon}) must be smaller than T ({self.T})")


@dataclass(frozen=True)
class SkipCoefficients:
    c_skip: float
    c_out: float


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed trajectory levels t_1..t_N for one configuration."""

    config: ScheduleConfig
    levels: np.ndarray

    @property
    def N(self) -> int:
        return len(self.levels)

    def level(self, n: int) -> float:
        """Return t_n for a 1-based trajectory index ``n``."""
        if not 1 <= n <= self.N:
            raise DomainError(f"trajectory index {n} outside 1..{self.N}")
        return float(self.levels[n - 1])

    @cached_property
    def coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        """(c_skip, c_out) evaluated at every level, 0-based arrays."""
        return skip_coefficients_array(self.levels, self.config)


def build_schedule(cfg: ScheduleConfig) -> NoiseSchedule:
    """Karras-style warped discretization between epsilon and T.

    ``t_n = [eps^(1/rho) + (n-1)/(N-1) * (T^(1/rho) - eps^(1/rho))]^rho``
    """
    inv_rho = 1.0 / cfg.rho
    lo = cfg.epsilon**inv_rho
    hi = cfg.T**inv_rho
    ramp = np.arange(cfg.N, dtype=np.float64) / (cfg.N - 1)
    levels = (lo + ramp * (hi - lo)) ** cfg.rho
    # pin the endpoints so they survive the power round trip exactly
    levels[0] = cfg.epsilon
    levels[-1] = cfg.T
    levels.setflags(write=False)
    return NoiseSchedule(cfg, levels)


def skip_coefficients_array(t: np.ndarray, cfg: ScheduleConfig) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < cfg.epsilon):
        raise DomainError(f"time level below epsilon={cfg.epsilon}")
    sd2 = cfg.sigma_data**2
    shifted = t - cfg.epsilon
    c_skip = sd2 / (shifted**2 + sd2)
    c_out = cfg.sigma_data * shifted / np.sqrt(sd2 + t**2)
    return c_skip, c_out


def skip_coefficients(t: float, cfg: ScheduleConfig) -> SkipCoefficients:
    """Input-passthrough and network weights at time ``t``.

    Both vanish/saturate exactly at ``t = epsilon``: ``c_skip = 1`` and
    ``c_out = 0``, so the parameterized model is the identity there.

    Raises:
        DomainError: if ``t < epsilon``.
    """
    c_skip, c_out = skip_coefficients_array(np.float64(t), cfg)
    return SkipCoefficients(float(c_skip), float(c_out))


def noise_to_level(x: np.ndarray, t: float, z: np.ndarray) -> np.ndarray:
    """Point on the trajectory at level ``t``: ``x + t * z``."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise DimensionError(f"x has shape {x.shape} but z has shape {z.shape}")
    if t < 0:
        raise DomainError(f"noise level must be non-negative, got {t}")
    return x + t * z
