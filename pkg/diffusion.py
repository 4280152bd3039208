"""
Noise schedule, forward noising and the deterministic DDIM reverse sampler.

All sampler arithmetic runs in float64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from errors import ConfigError

logger = logging.getLogger(__name__)

SCHEDULE_KINDS = ("cosine", "linear")


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Tabulated signal fraction gamma(t) for t = 0..T"""

    gamma: np.ndarray
    kind: str = "cosine"

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=np.float64)
        if gamma.ndim != 1 or gamma.size < 2:
            raise ConfigError("schedule needs at least gamma(0) and gamma(T)")
        if gamma[0] != 1.0 or gamma[-1] != 0.0:
            raise ConfigError(f"schedule must run from 1 to 0, got {gamma[0]} .. {gamma[-1]}")
        if np.any(np.diff(gamma) >= 0):
            raise ConfigError("schedule must be strictly decreasing")
        gamma = gamma.copy()
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)

    @property
    def T(self):
        return self.gamma.size - 1

    def __call__(self, t):
        return self.gamma[t]


@dataclass(frozen=True)
class SamplerConfig:
    schedule: NoiseSchedule
    T_prime: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.T_prime <= self.schedule.T:
            raise ConfigError(f"T_prime must be in 1..T={self.schedule.T}, got {self.T_prime}")
        if self.schedule.T % self.T_prime:
            raise ConfigError(f"T={self.schedule.T} is not divisible by T_prime={self.T_prime}")

    @property
    def dt(self):
        return self.schedule.T // self.T_prime


class DenoiserLike(Protocol):
    """What the sampler needs from a model"""

    shape: tuple

    def condition(self, volume): ...

    def denoise(self, v_t, cond, t): ...


def make_schedule(T, kind="cosine") -> NoiseSchedule:
    """cosine: gamma(t) = cos^2(pi t / 2T); linear: gamma(t) = 1 - t/T"""
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    t = np.arange(T + 1, dtype=np.float64)
    if kind == "cosine":
        gamma = np.cos(np.pi * t / (2.0 * T)) ** 2
    elif kind == "linear":
        gamma = 1.0 - t / T
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}, expected one of {SCHEDULE_KINDS}")
    gamma[0] = 1.0
    gamma[-1] = 0.0
    return NoiseSchedule(gamma, kind=kind)


def _check_t(t, sched, low=0):
    if not low <= t <= sched.T:
        raise ValueError(f"timestep {t} outside {low}..{sched.T}")


def forward_noise(v0, t, eps, sched: NoiseSchedule):
    """v_t = sqrt(gamma) v0 + sqrt(1 - gamma) eps"""
    v0 = np.asarray(v0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if v0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} does not match {v0.shape}")
    _check_t(t, sched)
    g = sched(t)
    return np.sqrt(g) * v0 + np.sqrt(1.0 - g) * eps


def predict_eps(v_t, v0_hat, t, sched: NoiseSchedule):
    """Noise implied by the current state and the predicted clean matrix"""
    _check_t(t, sched, low=1)
    g = sched(t)
    return (np.asarray(v_t, dtype=np.float64) - np.sqrt(g) * np.asarray(v0_hat, dtype=np.float64)) / np.sqrt(1.0 - g)


def ddim_step(v_t, v0_hat, t, dt, sched: NoiseSchedule):
    """Deterministic move from t to t - dt"""
    if t - dt < 0:
        raise ValueError(f"cannot step from t={t} by dt={dt}")
    eps_hat = predict_eps(v_t, v0_hat, t, sched)
    g_next = sched(t - dt)
    return np.sqrt(g_next) * np.asarray(v0_hat, dtype=np.float64) + np.sqrt(1.0 - g_next) * eps_hat


def timesteps(cfg: SamplerConfig):
    return list(range(cfg.schedule.T, 0, -cfg.dt))


def sample(denoiser: DenoiserLike, volume, cfg: SamplerConfig):
    """Run DDIM from N(0, 1) noise drawn with cfg.seed down to t = 0"""
    rng = np.random.default_rng(cfg.seed)
    v = rng.standard_normal(denoiser.shape)
    cond = denoiser.condition(volume)
    for t in timesteps(cfg):
        v0_hat = np.asarray(denoiser.denoise(v, cond, t), dtype=np.float64)
        v = ddim_step(v, v0_hat, t, cfg.dt, cfg.schedule)
    return v
