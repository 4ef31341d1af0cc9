"""Guidance combinators: pure arithmetic on noise predictions.

All combinators share the same linear extrapolation form
    eps_guided = eps + scale * (eps - eps_other),
which is why classifier-free guidance falls out as a special case of
perturbed-attention guidance with a condition-drop perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoiser import PerturbationSpec
from .errors import ConfigError, ShapeError

GUIDANCE_MODES = ("none", "cfg", "pag", "cfg_plus_pag")


@dataclass(frozen=True)
class GuidanceConfig:
    mode: str = "none"
    s: float = 1.0
    w: float = 0.0
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    window_start: float = 0.0
    window_end: float = 1.0

    def __post_init__(self):
        if self.mode not in GUIDANCE_MODES:
            raise ConfigError(f"guidance.mode must be one of {GUIDANCE_MODES}, "
                              f"got {self.mode!r}")
        if self.s < 0.0:
            raise ConfigError(f"guidance.s must be >= 0, got {self.s}")
        if self.w < 0.0:
            raise ConfigError(f"guidance.w must be >= 0, got {self.w}")
        if not (0.0 <= self.window_start <= self.window_end <= 1.0):
            raise ConfigError(
                "guidance window must satisfy 0 <= start <= end <= 1, got "
                f"[{self.window_start}, {self.window_end}]")

    def active_at(self, step_index: int, total_steps: int) -> bool:
        """Whether guidance applies at a 0-based step of the sampling loop.

        The window is a fraction interval over step indices, start-referenced.
        """
        frac = step_index / total_steps
        return self.window_start <= frac < self.window_end


def _check_shapes(*arrays):
    first = arrays[0]
    for a in arrays[1:]:
        if a.shape != first.shape:
            raise ShapeError(f"shape mismatch: {a.shape} != {first.shape}")


def pag_combine(eps: np.ndarray, eps_hat: np.ndarray, s: float) -> np.ndarray:
    """eps + s * (eps - eps_hat)."""
    eps = np.asarray(eps, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _check_shapes(eps, eps_hat)
    if s == 0.0:
        return eps.copy()
    return eps + s * (eps - eps_hat)


def cfg_combine(eps_c: np.ndarray, eps_u: np.ndarray, w: float) -> np.ndarray:
    """eps_c + w * (eps_c - eps_u); the same linear map as pag_combine."""
    return pag_combine(eps_c, eps_u, w)


def combined(eps_c: np.ndarray, eps_u: np.ndarray, eps_hat_c: np.ndarray,
             w: float, s: float) -> np.ndarray:
    """eps_c + w*(eps_c - eps_u) + s*(eps_c - eps_hat_c)."""
    eps_c = np.asarray(eps_c, dtype=np.float64)
    eps_u = np.asarray(eps_u, dtype=np.float64)
    eps_hat_c = np.asarray(eps_hat_c, dtype=np.float64)
    _check_shapes(eps_c, eps_u, eps_hat_c)
    return eps_c + w * (eps_c - eps_u) + s * (eps_c - eps_hat_c)


def delta_map(eps: np.ndarray, eps_hat: np.ndarray,
              clip_percentile: float = 99.5) -> np.ndarray:
    """Per-pixel |eps - eps_hat|, clipped at a high percentile per image.

    Grayscale images have a single channel, so the channel mean is the
    absolute difference itself.
    """
    eps = np.asarray(eps, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _check_shapes(eps, eps_hat)
    d = np.abs(eps - eps_hat)
    if d.ndim >= 3:
        caps = np.percentile(d, clip_percentile, axis=tuple(range(1, d.ndim)),
                             keepdims=True)
        d = np.minimum(d, caps)
    else:
        d = np.minimum(d, np.percentile(d, clip_percentile))
    return d
