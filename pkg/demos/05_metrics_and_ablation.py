"""Sample-quality metrics and a small guidance-scale ablation.

Loads a checkpoint, sweeps the guidance scale, and prints the energy
distance of each sample batch to a held-out reference set along with the
full metric report for the best setting.

Needs a checkpoint; run 02_train_and_sample.py first (or pass --ckpt).
"""

import argparse
import os

from pagdiff import (Denoiser, GuidanceConfig, PerturbationSpec,
                     energy_distance, gen_shapes, load_checkpoint, report,
                     sample_loop)

OUT = os.path.join(os.path.dirname(__file__), "out")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ckpt", default=os.path.join(OUT, "checkpoint.pagc"))
    ap.add_argument("--n", type=int, default=128)
    args = ap.parse_args()
    weights, config, sched = load_checkpoint(args.ckpt)
    model = Denoiser(config, weights=weights)

    reference, _ = gen_shapes(args.n, config.image_side, seed=991)
    spec = PerturbationSpec(kind="identity_map",
                            layers=frozenset({config.num_attention_blocks}))
    results = {}
    for s in (0.0, 0.5, 1.0, 2.0):
        guidance = GuidanceConfig(mode="pag", s=s, perturbation=spec,
                                  window_end=0.6)
        x0, _ = sample_loop(model, sched, guidance, sampler="ddim",
                            nsteps=25, n=args.n, seed=7)
        results[s] = (x0, energy_distance(x0, reference))
        print(f"s={s:g}: energy distance {results[s][1]:.4f}")

    best = min(results, key=lambda s: results[s][1])
    print(f"\nfull report at best scale s={best:g}:")
    for line in report(results[best][0], reference).lines():
        print(" ", line)


if __name__ == "__main__":
    main()
