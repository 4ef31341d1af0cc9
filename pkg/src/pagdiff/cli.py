"""Command-line entry point: train | sample | trace | ablate | restore | eval.

Exit codes: 0 success, 2 configuration error, 3 numeric abort (non-finite
state, reported with its step index on stderr).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data, metrics
from .config import (ALIASES, DEFAULTS, RunConfig, parse_float_list,
                     parse_int_list)
from .denoiser import (Denoiser, DenoiserConfig, PerturbationSpec,
                       TrainConfig, train)
from .errors import ConfigError, FormatError, NumericError
from .guidance import GuidanceConfig
from .inverse import RestoreConfig, make_operator, restore
from .sampler import predict_x0, sample_loop
from .schedule import make_linear_schedule

PERTURB_NAMES = {
    "none": "none",
    "identity": "identity_map",
    "identity_map": "identity_map",
    "random_mask": "random_mask",
    "offdiag_mask": "offdiag_mask",
    "additive_noise": "additive_noise",
    "map_blur": "map_blur",
    "condition_drop": "condition_drop",
    "input_blur": "input_blur",
}


def _parse_layers(text: str, num_blocks: int) -> frozenset:
    text = text.strip()
    if text == "deepest":
        return frozenset({num_blocks})
    if text == "all":
        return frozenset(range(1, num_blocks + 1))
    layers = frozenset(int(tok) for tok in text.replace("+", ",").split(",")
                       if tok.strip() != "")
    bad = [b for b in layers if not 1 <= b <= num_blocks]
    if bad:
        raise ConfigError(f"guidance.layers out of range 1..{num_blocks}: "
                          f"{sorted(bad)}")
    return layers


def _build_perturbation(rc: RunConfig, num_blocks: int,
                        kind_text: str | None = None,
                        layers_text: str | None = None) -> PerturbationSpec:
    name = kind_text if kind_text is not None else rc["guidance.perturb"]
    if name not in PERTURB_NAMES:
        raise ConfigError(f"guidance.perturb must be one of "
                          f"{sorted(set(PERTURB_NAMES))}, got {name!r}")
    return PerturbationSpec(
        kind=PERTURB_NAMES[name],
        layers=_parse_layers(layers_text if layers_text is not None
                             else rc["guidance.layers"], num_blocks),
        ratio=rc["guidance.ratio"], sigma=rc["guidance.sigma"],
        kernel_size=rc["guidance.kernel_size"],
        blur_sigma=rc["guidance.blur_sigma"],
        seed=rc["guidance.perturb_seed"])


def _build_guidance(rc: RunConfig, num_blocks: int) -> GuidanceConfig:
    return GuidanceConfig(
        mode=rc["guidance.mode"], s=rc["guidance.s"], w=rc["guidance.w"],
        perturbation=_build_perturbation(rc, num_blocks),
        window_start=rc["guidance.window_start"],
        window_end=rc["guidance.window_end"])


def _load_model(rc: RunConfig):
    path = rc["ckpt"]
    if not path:
        raise ConfigError("this command requires --ckpt")
    weights, config, schedule = data.load_checkpoint(path)
    return Denoiser(config, weights=weights), schedule


def _class_label(rc: RunConfig):
    c = rc["sampler.class"]
    return None if c < 0 else c


def cmd_train(rc: RunConfig) -> int:
    config = DenoiserConfig(
        image_side=rc["model.image_side"], token_dim=rc["model.token_dim"],
        num_attention_blocks=rc["model.blocks"],
        num_classes=rc["model.num_classes"],
        cond_dropout_prob=rc["model.cond_dropout"])
    schedule = make_linear_schedule(rc["schedule.T"],
                                    rc["schedule.beta_start"],
                                    rc["schedule.beta_end"])
    images, labels = data.gen_shapes(rc["data.n"], config.image_side,
                                     rc["data.seed"])
    model = Denoiser(config, init_seed=rc["model.init_seed"])
    tc = TrainConfig(steps=rc["train.steps"], batch_size=rc["train.batch"],
                     lr=rc["train.lr"], beta1=rc["train.beta1"],
                     beta2=rc["train.beta2"], eps=rc["train.eps"],
                     seed=rc["seed"])
    _, losses = train(model, schedule, images, labels, tc)
    out = rc["out"]
    os.makedirs(out, exist_ok=True)
    data.save_checkpoint(os.path.join(out, "checkpoint.pagc"), model.weights,
                         config, schedule, rc["schedule.beta_start"],
                         rc["schedule.beta_end"])
    with open(os.path.join(out, "loss_curve.txt"), "w") as f:
        f.writelines(f"{v:.12g}\n" for v in losses)
    if len(losses):
        print(f"final loss {losses[-1]:.6g} over {len(losses)} steps")
    return 0


def _run_sampler(rc: RunConfig, trace_stride: int):
    model, schedule = _load_model(rc)
    guidance = _build_guidance(rc, model.config.num_attention_blocks)
    return model, schedule, sample_loop(
        model, schedule, guidance=guidance, sampler=rc["sampler.kind"],
        nsteps=rc["sampler.steps"], n=rc["sampler.n"],
        class_label=_class_label(rc), seed=rc["seed"],
        trace_stride=trace_stride)


def cmd_sample(rc: RunConfig) -> int:
    _, _, (x0, trace) = _run_sampler(rc, rc["sampler.trace_stride"])
    out = rc["out"]
    os.makedirs(out, exist_ok=True)
    data.export_pgm(x0, os.path.join(out, "samples.pgm"))
    data.save_tensor(os.path.join(out, "samples.pagt"), x0)
    if trace is not None:
        data.save_trace_container(os.path.join(out, "trace.pagc"), trace)
    print(f"wrote {x0.shape[0]} samples to {out}")
    return 0


def cmd_trace(rc: RunConfig) -> int:
    stride = rc["sampler.trace_stride"] or 1
    _, schedule, (x0, trace) = _run_sampler(rc, stride)
    out = rc["out"]
    os.makedirs(out, exist_ok=True)
    data.save_trace_container(os.path.join(out, "trace.pagc"), trace)
    for step in trace.steps:
        rows = [np.clip(predict_x0(schedule, step.x_t, step.t, step.eps),
                        -1, 1)]
        if step.eps_hat is not None:
            rows.append(np.clip(predict_x0(schedule, step.x_t, step.t,
                                           step.eps_hat), -1, 1))
            rows.append(np.clip(step.x0_hat, -1, 1))
            peak = step.delta.max()
            rows.append(2.0 * step.delta / peak - 1.0 if peak > 0
                        else np.full_like(step.delta, -1.0))
        n = rows[0].shape[0]
        panel = np.concatenate(
            [data.tile_grid(row, cols=n) for row in rows], axis=0)
        data.export_pgm(panel, os.path.join(out, f"trace_t{step.t:04d}.pgm"))
    print(f"wrote {len(trace.steps)} trace panels to {out}")
    return 0


def cmd_ablate(rc: RunConfig) -> int:
    model, schedule = _load_model(rc)
    num_blocks = model.config.num_attention_blocks
    perturbs = [tok.strip() for tok in rc["ablate.perturbs"].split(",")
                if tok.strip()]
    scales = parse_float_list(rc["ablate.scales"])
    layer_sets = [tok.strip() for tok in rc["ablate.layers"].split(",")
                  if tok.strip()]
    reference, _ = data.gen_shapes(rc["ablate.ref_n"],
                                   model.config.image_side,
                                   rc["data.seed"] + 1)
    lines = ["perturb\tscale\tlayers\tenergy_distance"]
    for name in perturbs:
        for scale in scales:
            for layers_text in layer_sets:
                spec = _build_perturbation(rc, num_blocks, kind_text=name,
                                           layers_text=layers_text)
                guidance = GuidanceConfig(mode="pag", s=scale,
                                          perturbation=spec)
                x0, _ = sample_loop(
                    model, schedule, guidance=guidance,
                    sampler=rc["sampler.kind"], nsteps=rc["sampler.steps"],
                    n=rc["ablate.n"], class_label=_class_label(rc),
                    seed=rc["seed"])
                ed = metrics.energy_distance(x0, reference)
                lines.append(f"{name}\t{scale:g}\t{layers_text}\t{ed:.6f}")
    table = "\n".join(lines) + "\n"
    out = rc["out"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "ablate.txt"), "w") as f:
        f.write(table)
    print(table, end="")
    return 0


def _restore_operator(rc: RunConfig, side: int):
    task = rc["restore.task"]
    if task == "inpaint":
        rect = parse_int_list(rc["restore.rect"])
        return make_operator("box_mask", rect=rect)
    if task == "deblur":
        return make_operator("gaussian_blur",
                             kernel_size=rc["restore.kernel_size"],
                             sigma=rc["restore.blur_sigma"])
    if task == "sr":
        return make_operator("downsample", factor=rc["restore.factor"])
    raise ConfigError(f"restore.task must be inpaint, deblur, or sr, "
                      f"got {task!r}")


def cmd_restore(rc: RunConfig) -> int:
    model, schedule = _load_model(rc)
    if not rc["in"]:
        raise ConfigError("restore requires --in (measurement tensor)")
    y = data.load_tensor(rc["in"])
    op = _restore_operator(rc, model.config.image_side)
    cfg = RestoreConfig(eta=rc["restore.eta"],
                        guidance=_build_guidance(
                            rc, model.config.num_attention_blocks),
                        noise_std=rc["restore.noise_std"])
    x0, _ = restore(y, op, model, schedule, cfg, sampler=rc["sampler.kind"],
                    nsteps=rc["sampler.steps"], n=rc["sampler.n"],
                    seed=rc["seed"])
    out = rc["out"]
    if out.endswith(".pagt"):
        data.save_tensor(out, x0)
    else:
        os.makedirs(out, exist_ok=True)
        data.save_tensor(os.path.join(out, "restored.pagt"), x0)
        data.export_pgm(x0, os.path.join(out, "restored.pgm"))
    print(f"restored {x0.shape[0]} samples -> {out}")
    return 0


def cmd_eval(rc: RunConfig) -> int:
    if not rc["eval.samples"] or not rc["eval.reference"]:
        raise ConfigError("eval requires --samples and --reference")
    samples = data.load_tensor(rc["eval.samples"])
    reference = data.load_tensor(rc["eval.reference"])
    rep = metrics.report(samples, reference, k=rc["eval.k"], seed=rc["seed"])
    text = "\n".join(rep.lines()) + "\n"
    if rc["eval.report"]:
        with open(rc["eval.report"], "w") as f:
            f.write(text)
    print(text, end="")
    return 0


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "trace": cmd_trace,
    "ablate": cmd_ablate,
    "restore": cmd_restore,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pagdiff",
        description="Guided diffusion sampling on a toy attention denoiser")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="key = value config file; flags override it")
        seen = set()
        for key in DEFAULTS:
            p.add_argument(f"--{key}", dest=key, default=None)
            seen.add(key)
        for alias, key in ALIASES.items():
            if alias not in seen:
                p.add_argument(f"--{alias}", dest=f"alias.{alias}",
                               default=None)
        # --scale sets whichever guidance scale the mode uses
        p.add_argument("--scale", dest="alias.scale", default=None)
    return parser


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config")
    overrides = {}
    for key, value in args.items():
        if value is None:
            continue
        key = key.removeprefix("alias.")
        if key == "scale":
            overrides["guidance.s"] = value
            overrides["guidance.w"] = value
        else:
            overrides[key] = value
    try:
        rc = RunConfig(overrides, config_path)
        return COMMANDS[command](rc)
    except (ConfigError, FormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
