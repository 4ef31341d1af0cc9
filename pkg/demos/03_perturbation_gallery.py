"""Gallery of attention-map perturbations on a single random attention call.

Shows what each attention-level degradation does to a softmax map: identity
replacement, random and off-diagonal masking, additive noise, and blurring.
Each map is saved as a small PGM image (rows of the 64x64 map).
"""

import os

import numpy as np

from pagdiff import PerturbationSpec, perturbed_self_attention, self_attention

OUT = os.path.join(os.path.dirname(__file__), "out")

SPECS = {
    "identity_map": PerturbationSpec(kind="identity_map"),
    "random_mask": PerturbationSpec(kind="random_mask", ratio=0.5, seed=0),
    "offdiag_mask": PerturbationSpec(kind="offdiag_mask", ratio=0.9, seed=0),
    "additive_noise": PerturbationSpec(kind="additive_noise", sigma=0.05,
                                       seed=0),
    "map_blur": PerturbationSpec(kind="map_blur", kernel_size=5,
                                 blur_sigma=1.0),
}


def save_map(attn, path):
    # rescale to use the full gray range
    img = attn / attn.max() * 2.0 - 1.0
    from pagdiff import export_pgm
    export_pgm(img[None], path)


def main():
    os.makedirs(OUT, exist_ok=True)
    rng = np.random.default_rng(3)
    q, k, v = rng.standard_normal((3, 64, 16))
    _, base = self_attention(q, k, v, return_map=True)
    save_map(base, os.path.join(OUT, "attn_plain.pgm"))
    print(f"plain map: row sums {base.sum(axis=1).min():.3f}.."
          f"{base.sum(axis=1).max():.3f}")
    for name, spec in SPECS.items():
        out, attn = perturbed_self_attention(q, k, v, spec, return_map=True)
        drift = float(np.abs(out - base @ v).mean())
        save_map(attn, os.path.join(OUT, f"attn_{name}.pgm"))
        print(f"{name:15s} mean |delta v| = {drift:.4f}")


if __name__ == "__main__":
    main()
