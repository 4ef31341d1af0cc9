"""Perturbed-attention guided diffusion sampling at desk scale.

A self-contained numpy implementation: a tiny self-attention denoiser on
synthetic shape images, DDPM/DDIM samplers with pluggable guidance
(perturbed-attention, classifier-free, combined), an attention-perturbation
ablation registry, linear inverse-problem restoration with a diffusion
prior, and raw-pixel sample-quality metrics.
"""

from .data import (class_templates, export_pgm, gen_shapes, load_checkpoint,
                   load_tensor, load_trace_container, save_checkpoint,
                   save_tensor, save_trace_container, tile_grid, to_uint8)
from .denoiser import (Denoiser, DenoiserConfig, PerturbationSpec,
                       TrainConfig, init_weights, perturbed_self_attention,
                       self_attention, train)
from .errors import (ConfigError, CorruptionError, FormatError, NumericError,
                     ShapeError)
from .guidance import (GuidanceConfig, cfg_combine, combined, delta_map,
                       pag_combine)
from .inverse import (BoxMask, Downsample, GaussianBlur, MeasurementOp,
                      RestoreConfig, dps_gradient, make_operator, measure,
                      restore)
from .metrics import (MetricReport, energy_distance, knn_precision_recall,
                      pairwise_diversity, report)
from .sampler import (SampleTrace, TraceStep, chain_rng, ddim_step,
                      ddim_time_grid, ddpm_step, predict_x0, sample_loop)
from .schedule import NoiseSchedule, make_linear_schedule

__version__ = "0.1.0"

__all__ = [
    "class_templates", "export_pgm", "gen_shapes", "load_checkpoint",
    "load_tensor", "load_trace_container", "save_checkpoint", "save_tensor",
    "save_trace_container", "tile_grid", "to_uint8",
    "Denoiser", "DenoiserConfig", "PerturbationSpec", "TrainConfig",
    "init_weights", "perturbed_self_attention", "self_attention", "train",
    "ConfigError", "CorruptionError", "FormatError", "NumericError",
    "ShapeError",
    "GuidanceConfig", "cfg_combine", "combined", "delta_map", "pag_combine",
    "BoxMask", "Downsample", "GaussianBlur", "MeasurementOp",
    "RestoreConfig", "dps_gradient", "make_operator", "measure", "restore",
    "MetricReport", "energy_distance", "knn_precision_recall",
    "pairwise_diversity", "report",
    "SampleTrace", "TraceStep", "chain_rng", "ddim_step", "ddim_time_grid",
    "ddpm_step", "predict_x0", "sample_loop",
    "NoiseSchedule", "make_linear_schedule",
]
