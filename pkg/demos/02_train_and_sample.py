"""Train the toy denoiser on the shapes dataset and draw guided samples.

This is the end-to-end happy path: train for a couple of minutes, save a
checkpoint, then compare unguided sampling against perturbed-attention
guidance side by side. Pass --quick to shrink everything for a smoke run.
"""

import argparse
import os

from pagdiff import (Denoiser, DenoiserConfig, GuidanceConfig,
                     PerturbationSpec, TrainConfig, export_pgm, gen_shapes,
                     make_linear_schedule, sample_loop, save_checkpoint,
                     train)

OUT = os.path.join(os.path.dirname(__file__), "out")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    steps = 200 if args.quick else 2000

    os.makedirs(OUT, exist_ok=True)
    config = DenoiserConfig()
    sched = make_linear_schedule(100)
    images, labels = gen_shapes(2000, config.image_side, seed=0)
    model = Denoiser(config, init_seed=0)
    _, losses = train(model, sched, images, labels,
                      TrainConfig(steps=steps, seed=0))
    print(f"trained {steps} steps, loss {losses[:50].mean():.3f} -> "
          f"{losses[-50:].mean():.3f}")
    ckpt = os.path.join(OUT, "checkpoint.pagc")
    save_checkpoint(ckpt, model.weights, config, sched, 1e-4, 0.02)
    print("saved", ckpt)

    spec = PerturbationSpec(kind="identity_map",
                            layers=frozenset({config.num_attention_blocks}))
    for name, guidance in [
            ("unguided", GuidanceConfig(mode="none")),
            ("pag", GuidanceConfig(mode="pag", s=1.0, perturbation=spec,
                                   window_end=0.6))]:
        x0, _ = sample_loop(model, sched, guidance, sampler="ddim",
                            nsteps=25, n=16, seed=1)
        path = os.path.join(OUT, f"samples_{name}.pgm")
        export_pgm(x0, path)
        print("wrote", path)


if __name__ == "__main__":
    main()
