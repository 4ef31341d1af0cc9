"""Walk through the noise schedule and the forward (noising) process.

Builds the default linear schedule, prints how alpha_bar decays, then
progressively noises one dataset image and writes the sequence as a PGM
strip next to this script.
"""

import os

import numpy as np

from pagdiff import export_pgm, gen_shapes, make_linear_schedule

OUT = os.path.join(os.path.dirname(__file__), "out")


def main():
    os.makedirs(OUT, exist_ok=True)
    sched = make_linear_schedule(100)
    print("T =", sched.T)
    for t in (1, 25, 50, 75, 100):
        print(f"  t={t:3d}  beta={sched.beta(t):.5f}  "
              f"alpha_bar={sched.alpha_bar(t):.5f}")

    images, labels = gen_shapes(1, 8, seed=0)
    x0 = images[:1]
    rng = np.random.default_rng(0)
    frames = [x0[0]]
    for t in (10, 30, 50, 70, 100):
        eps = rng.standard_normal(x0.shape)
        frames.append(sched.q_sample(x0, t, eps)[0])
    path = os.path.join(OUT, "forward_process.pgm")
    export_pgm(np.stack(frames), path, cols=len(frames))
    print("wrote", path)


if __name__ == "__main__":
    main()
