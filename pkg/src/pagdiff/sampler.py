"""Reverse-process drivers: DDPM ancestral and deterministic DDIM sampling.

Each sampling chain owns a counter-based RNG stream keyed by (seed, chain),
so batch-parallel runs are bit-identical to serial runs.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .denoiser import Denoiser
from .errors import ConfigError, NumericError
from .guidance import (GuidanceConfig, cfg_combine, combined, delta_map,
                       pag_combine)
from .schedule import NoiseSchedule, _broadcast_per_item


# chains per worker unit; fixed so serial and parallel runs chunk alike
_CHAIN_CHUNK = 16


@dataclass
class TraceStep:
    """Per-step diagnostics: state, raw/perturbed/guided noise, x0 estimate."""

    t: int
    x_t: np.ndarray
    eps: np.ndarray
    eps_hat: np.ndarray | None
    eps_tilde: np.ndarray
    delta: np.ndarray | None
    x0_hat: np.ndarray


@dataclass
class SampleTrace:
    steps: list = field(default_factory=list)


def predict_x0(schedule: NoiseSchedule, x_t: np.ndarray, t,
               eps: np.ndarray) -> np.ndarray:
    """One-shot clean-image estimate (x_t - sqrt(1-abar)*eps)/sqrt(abar)."""
    ab = _broadcast_per_item(schedule.alpha_bar(t), np.asarray(x_t))
    return (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def ddpm_step(schedule: NoiseSchedule, x_t: np.ndarray, t: int,
              eps_tilde: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Ancestral step: posterior mean plus sigma_t * z (z = 0 at t = 1)."""
    alpha = schedule.alpha(t)
    ab = schedule.alpha_bar(t)
    mean = (x_t - schedule.beta(t) / np.sqrt(1.0 - ab) * eps_tilde) \
        / np.sqrt(alpha)
    return mean + schedule.sigma(t) * z


def ddim_step(schedule: NoiseSchedule, x_t: np.ndarray, t: int, t_prev: int,
              eps_tilde: np.ndarray) -> np.ndarray:
    """Deterministic (eta = 0) jump from t to t_prev; t_prev = 0 is clean."""
    if t_prev >= t:
        raise ConfigError(f"ddim step grid not decreasing: t={t}, "
                          f"t_prev={t_prev}")
    x0_hat = predict_x0(schedule, x_t, t, eps_tilde)
    ab_prev = schedule.alpha_bar(t_prev)
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_tilde


def ddim_time_grid(T: int, nsteps: int) -> list:
    """Evenly spaced descending subsequence of {1..T} ending with a jump
    to t = 0; always includes T."""
    if nsteps < 1:
        raise ConfigError(f"ddim steps must be >= 1, got {nsteps}")
    if nsteps > T:
        raise ConfigError(f"ddim steps {nsteps} exceeds schedule length {T}")
    ts = [(i * T) // nsteps for i in range(1, nsteps + 1)]
    if len(set(ts)) != nsteps:
        raise ConfigError(f"degenerate ddim grid for T={T}, nsteps={nsteps}")
    ts = ts[::-1]
    return [(ts[i], ts[i + 1] if i + 1 < len(ts) else 0)
            for i in range(len(ts))]


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Counter-based per-chain RNG stream."""
    return np.random.Generator(np.random.Philox(key=(seed << 64) + chain))


def _guided_eps(model: Denoiser, x, t, c_cond, null_c, guidance, active):
    """Returns (eps, eps_hat_or_None, eps_tilde); counts forward passes."""
    if not active or guidance.mode == "none":
        eps = model.forward(x, t, c_cond)
        return eps, None, eps
    if guidance.mode == "pag":
        eps = model.forward(x, t, c_cond)
        eps_hat = model.forward(x, t, c_cond, guidance.perturbation)
        return eps, eps_hat, pag_combine(eps, eps_hat, guidance.s)
    if guidance.mode == "cfg":
        eps_c = model.forward(x, t, c_cond)
        eps_u = model.forward(x, t, null_c)
        return eps_c, eps_u, cfg_combine(eps_c, eps_u, guidance.w)
    # cfg_plus_pag
    eps_c = model.forward(x, t, c_cond)
    eps_u = model.forward(x, t, null_c)
    eps_hat_c = model.forward(x, t, c_cond, guidance.perturbation)
    return eps_c, eps_hat_c, combined(eps_c, eps_u, eps_hat_c,
                                      guidance.w, guidance.s)


def _run_chains(model, schedule, guidance, steps, sampler_kind, rngs,
                c_cond, trace_stride, step_hook):
    side = model.config.image_side
    null_c = model.config.null_class_index
    x = np.stack([rng.standard_normal((side, side)) for rng in rngs])
    trace_steps = []
    total = len(steps)
    for i, (t, t_prev) in enumerate(steps):
        active = guidance.active_at(i, total)
        eps, eps_hat, eps_tilde = _guided_eps(model, x, t, c_cond, null_c,
                                              guidance, active)
        if sampler_kind == "ddpm":
            if t > 1:
                z = np.stack([rng.standard_normal((side, side))
                              for rng in rngs])
            else:
                z = np.zeros_like(x)
            x_next = ddpm_step(schedule, x, t, eps_tilde, z)
        else:
            x_next = ddim_step(schedule, x, t, t_prev, eps_tilde)
        if step_hook is not None:
            x_next = step_hook(x_next, x, t, eps)
        if not np.isfinite(x_next).all():
            raise NumericError(f"non-finite sampler state at step index {i} "
                               f"(t={t})")
        if trace_stride and i % trace_stride == 0:
            trace_steps.append(TraceStep(
                t=t, x_t=x.copy(), eps=eps,
                eps_hat=eps_hat, eps_tilde=eps_tilde,
                delta=None if eps_hat is None else delta_map(eps, eps_hat),
                x0_hat=predict_x0(schedule, x, t, eps_tilde)))
        x = x_next
    return x, trace_steps


def sample_loop(model: Denoiser, schedule: NoiseSchedule,
                guidance: GuidanceConfig = GuidanceConfig(),
                sampler: str = "ddpm", nsteps: int | None = None,
                n: int = 1, class_label: int | None = None, seed: int = 0,
                trace_stride: int = 0, threads: int | None = None,
                step_hook=None):
    """Generate a batch from seeded Gaussian noise.

    Returns (x0_batch, SampleTrace-or-None). `threads` > 0 fans chains out
    to a worker pool; results are bitwise identical to the serial run.
    Defaults to the PAG_THREADS environment variable (0 = serial).
    """
    if sampler not in ("ddpm", "ddim"):
        raise ConfigError(f"sampler must be 'ddpm' or 'ddim', got {sampler!r}")
    if guidance.mode in ("cfg", "cfg_plus_pag") and class_label is None:
        raise ConfigError(f"guidance mode {guidance.mode!r} requires a class")
    if sampler == "ddim":
        steps = ddim_time_grid(schedule.T, nsteps or 25)
    else:
        steps = [(t, t - 1) for t in range(schedule.T, 0, -1)]
    c_cond = (model.config.null_class_index if class_label is None
              else int(class_label))

    if threads is None:
        threads = int(os.environ.get("PAG_THREADS", "0"))
    rngs = [chain_rng(seed, j) for j in range(n)]

    # Chains are always processed in fixed-size chunks so that serial and
    # worker-pool runs perform identical array operations (BLAS results can
    # depend on operand shapes) and therefore agree bitwise.
    chunks = [(lo, min(lo + _CHAIN_CHUNK, n))
              for lo in range(0, n, _CHAIN_CHUNK)]

    def run(lo, hi):
        return _run_chains(model, schedule, guidance, steps, sampler,
                           rngs[lo:hi], c_cond, trace_stride, step_hook)

    if threads > 0 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run, lo, hi) for lo, hi in chunks]
            results = [f.result() for f in futures]
    else:
        results = [run(lo, hi) for lo, hi in chunks]
    x = np.concatenate([r[0] for r in results])
    trace_steps = _merge_trace_parts([r[1] for r in results])
    trace = SampleTrace(steps=trace_steps) if trace_stride else None
    return x, trace


def _merge_trace_parts(parts):
    if not parts or not parts[0]:
        return []
    merged = []
    for rec in zip(*parts):
        first = rec[0]

        def cat(get):
            vals = [get(r) for r in rec]
            return None if vals[0] is None else np.concatenate(vals)

        merged.append(TraceStep(
            t=first.t,
            x_t=cat(lambda r: r.x_t), eps=cat(lambda r: r.eps),
            eps_hat=cat(lambda r: r.eps_hat),
            eps_tilde=cat(lambda r: r.eps_tilde),
            delta=cat(lambda r: r.delta), x0_hat=cat(lambda r: r.x0_hat)))
    return merged
