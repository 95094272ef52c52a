#!/usr/bin/env python3
# The two 1-NN directions on hand-made "generators".
#
# overfitting: each generated sample -> nearest real sample (small = copies the data)
# mode drop:   each real sample -> nearest generated sample (large = parts of the data are missed)
#
# Run from the repo root:  python3 notebooks/02_metrics_walkthrough.py

import numpy as np

from stochgan.datasets import LatentSet, MixtureSpec, make_fixed_latents, make_gaussian_ring
from stochgan.evaluation import evaluate, feature_space, modes_covered, pixel_space

ring = MixtureSpec(modes=8, radius=2.0, std=0.05)
X = make_gaussian_ring(ring, 512, seed=0)
Z = make_fixed_latents(512, 16, seed=1)
spaces = [pixel_space(), feature_space(2, seed=0)]


def show(name, gen, Z=Z):
    print(f"\n-- {name}")
    for r in evaluate(gen, Z, X, spaces, query_count=200, seed_eval=0):
        print(f"   {r.direction:12s} {r.space:18s} avg {r.avg:8.4f}  top10 {r.top10:8.4f}  top5 {r.top5:8.4f}")


# %% a perfect memorizer: latent i -> data point i
index_latents = LatentSet(np.arange(512, dtype=float)[:, None])
show("memorizer", lambda z: X.samples[z[:, 0].astype(int)], index_latents)

# %% a fresh draw from the true distribution: small in both directions, but not zero
fresh = make_gaussian_ring(ring, 512, seed=99).samples
show("fresh samples", lambda z: fresh[: len(z)])

# %% half the modes: overfitting still looks fine, mode drop flags the gap
half = fresh[np.isin(np.arange(512) // 64, [0, 2, 4, 6])]
show("four of eight modes", lambda z: np.resize(half, (len(z), 2)))
print("   modes covered:", modes_covered(half, ring.centers(), 3 * ring.std).sum(), "/ 8")

# %% total collapse to the origin
show("collapsed to (0, 0)", lambda z: np.zeros((len(z), 2)))
