#!/usr/bin/env python3
# Train the ring GAN under the three stochasticity regimes and compare the
# EMA generators with the 1-NN metrics.
#
# Budget is deliberately small so this finishes in about a minute; the
# full-size runs live in tests/test_acceptance.py (criteria 6 and 7) and
# in `stochgan sweep`.
#
# Run from the repo root:  python3 notebooks/03_ring_regimes.py [iterations]

import sys
import time
from pathlib import Path

import numpy as np

from stochgan import autodiff as ad
from stochgan.datasets import MixtureSpec, make_fixed_latents, make_gaussian_ring
from stochgan.evaluation import as_sampler, evaluate, modes_covered, pixel_space
from stochgan.experiment import emit_grid
from stochgan.training import TrainConfig, train

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
out = Path("notebooks/out")
out.mkdir(exist_ok=True)

ring = MixtureSpec(8, 2.0, 0.05)
X = make_gaussian_ring(ring, 512, seed=0)
Z = make_fixed_latents(512, 16, seed=1)

# %% one config per regime; m = n with no noise is fully deterministic
regimes = {
    "deterministic m=512": TrainConfig(m=512, max_iters=iters),
    "mini-batch m=128": TrainConfig(m=128, max_iters=iters),
    "mini-batch m=32": TrainConfig(m=32, max_iters=iters),
    "latent noise 0.5": TrainConfig(m=512, noise_variance=0.5, max_iters=iters),
}

# %% train in 32-bit: about twice as fast, and the tests pin 64-bit determinism separately
rows = []
with ad.precision("f32"):
    for name, cfg in regimes.items():
        t0 = time.perf_counter()
        res = train(cfg, X, Z)
        of, md = evaluate(res.ema_params, Z, X, [pixel_space()])
        gen = as_sampler(res.ema_params)(Z.latents)
        cov = modes_covered(gen, ring.centers(), 3 * ring.std).sum()
        emit_grid(gen, out / f"{name.split()[0]}_{cfg.m}_{cfg.noise_variance}.svg", reference=X)
        rows.append((name, res.iterations, of.avg, md.avg, cov, time.perf_counter() - t0))

# %% the table
print(f"{'regime':22s} {'iters':>6s} {'overfit':>9s} {'mode-drop':>10s} {'modes':>6s} {'secs':>6s}")
for name, it, of, md, cov, secs in rows:
    print(f"{name:22s} {it:6d} {of:9.5f} {md:10.5f} {cov:4d}/8 {secs:6.1f}")

# %% the window trace used by the stop rule is on the TrainResult as well:
# res.metric_trace is a list of (iteration, mode-drop avg) pairs
print("\nlast run's stop-rule trace:", [(t, round(v, 4)) for t, v in res.metric_trace])
print("scatter plots written to", out)
