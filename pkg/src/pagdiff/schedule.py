"""Diffusion variance schedule and the forward (noising) process.

Timesteps are 1-based: t ranges over {1..T}, t=0 means clean data and is
never a valid schedule index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variance tables: beta_t, alpha_t, alpha_bar_t, sigma_t.

    Immutable after construction; safe to share read-only across workers.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    def beta(self, t) -> np.ndarray:
        return self.betas[self._index(t)]

    def alpha(self, t) -> np.ndarray:
        return self.alphas[self._index(t)]

    def alpha_bar(self, t) -> np.ndarray:
        """alpha_bar at 1-based t; t=0 maps to exactly 1 (clean data)."""
        t = np.asarray(t)
        if np.any(t == 0):
            out = np.where(t == 0, 1.0, self.alpha_bars[np.maximum(t, 1) - 1])
            return out
        return self.alpha_bars[self._index(t)]

    def sigma(self, t) -> np.ndarray:
        return self.sigmas[self._index(t)]

    def _index(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ConfigError(f"timestep out of range [1, {self.T}]: {t}")
        return t - 1

    def q_sample(self, x0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
        """Noise a clean batch: sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps.

        t may be a scalar or a per-item array of shape (N,).
        """
        x0 = np.asarray(x0, dtype=np.float64)
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != x0.shape:
            raise ShapeError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
        ab = self.alpha_bar(t)
        ab = _broadcast_per_item(ab, x0)
        return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def _broadcast_per_item(values, like: np.ndarray):
    """Reshape a (N,) coefficient array so it broadcasts over item dims."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        return values
    return values.reshape(values.shape[0], *((1,) * (like.ndim - 1)))


def make_linear_schedule(T: int, beta_start: float = 1e-4,
                         beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule, inclusive of both endpoints."""
    if T < 1:
        raise ConfigError(f"schedule.T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            "schedule betas must satisfy 0 < beta_start <= beta_end < 1, got "
            f"beta_start={beta_start}, beta_end={beta_end}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    sigmas = np.sqrt(betas)
    sched = NoiseSchedule(T=T, betas=betas, alphas=alphas,
                          alpha_bars=alpha_bars, sigmas=sigmas)
    for arr in (betas, alphas, alpha_bars, sigmas):
        arr.setflags(write=False)
    return sched
