"""GAN training with controllable stochasticity.

Three regimes share one loop:

* deterministic: ``m == n == k``; every update sees all of X and all of Z
  in fixed order and no sampling randomness is consumed;
* mini-batch: ``m < n``; data indices drawn with replacement, latent
  indices drawn without replacement from an epoch-wise permutation of Z;
* latent noise: ``noise_variance > 0``; each training forward pass of the
  generator sees ``z + eps`` with ``eps ~ N(0, noise_variance * I)``.

Updates alternate one discriminator step and one generator step with the
non-saturating generator loss.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .datasets import LatentSet, SampleSet
from .evaluation import mode_drop_metric, pixel_space
from .network import (ParamStore, discriminator_forward, discriminator_spec, generator_forward,
                      generator_spec, init_params, save_checkpoint)
from .optim import EMA, Adam

log = logging.getLogger(__name__)

HISTORY_VERSION = 1


class ConfigError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    """A loss or gradient went non-finite. ``dump`` holds the step inputs."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class TrainConfig:
    n: int = 512
    k: int = 512
    m: int = 512
    latent_dim: int = 16
    noise_variance: float = 0.0
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    adam_eps: float = 1e-8
    ema_decay: float = 0.999
    max_iters: int = 20000
    convergence_window: int = 500
    convergence_tol: float = 0.02
    seed_data: int = 0
    seed_latent: int = 1
    seed_train: int = 2
    seed_eval: int = 0
    eval_query_count: int = 200
    g_hidden: tuple[int, ...] = (128, 256)
    d_hidden: tuple[int, ...] = (256, 128)
    checkpoint_every: int = 0
    force_mixed_stochasticity: bool = False

    @property
    def batch_exponent(self) -> float:
        """l in m = n / 2**l (informational)."""
        return math.log2(self.n / self.m)

    def validate(self) -> "TrainConfig":
        if not 1 <= self.m <= self.n:
            raise ConfigError(f"need 1 <= m <= n, got m={self.m}, n={self.n}")
        if self.m > self.k:
            raise ConfigError(f"m={self.m} exceeds latent set size k={self.k}")
        if self.m == self.n and self.k != self.n:
            raise ConfigError("the full-batch (deterministic) regime requires k == n")
        if self.k % self.m:
            raise ConfigError(f"m={self.m} must divide k={self.k} for the without-replacement schedule")
        if self.noise_variance < 0:
            raise ConfigError("noise_variance must be non-negative")
        for name in ("latent_dim", "convergence_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be non-negative")
        regime = self.regime
        if regime.minibatch_enabled and regime.latent_noise_enabled:
            if not self.force_mixed_stochasticity:
                raise ConfigError("mini-batch sampling and latent noise are both enabled; "
                                  "set force_mixed_stochasticity to combine them")
            warnings.warn("training with both stochasticity sources enabled", stacklevel=2)
        return self

    @property
    def regime(self) -> "StochasticityRegime":
        return StochasticityRegime(self.m < self.n, self.noise_variance > 0)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class StochasticityRegime:
    minibatch_enabled: bool
    latent_noise_enabled: bool

    @property
    def deterministic(self) -> bool:
        return not (self.minibatch_enabled or self.latent_noise_enabled)


# -- losses -------------------------------------------------------------------

def _check_probabilities(p: ad.Tensor, what: str) -> None:
    if np.any(p.data <= 0) or np.any(p.data >= 1):
        raise ValueError(f"{what} must lie strictly inside (0, 1)")


def d_loss(p_real, p_fake) -> ad.Tensor:
    """Negated discriminator objective: -(mean log D(x) + mean log(1 - D(G(z))))."""
    p_real, p_fake = ad.as_tensor(p_real), ad.as_tensor(p_fake)
    _check_probabilities(p_real, "p_real")
    _check_probabilities(p_fake, "p_fake")
    return -(ad.mean(ad.log(p_real)) + ad.mean(ad.log(1.0 - p_fake)))


def g_loss(p_fake) -> ad.Tensor:
    """Non-saturating generator loss: -mean log D(G(z))."""
    p_fake = ad.as_tensor(p_fake)
    _check_probabilities(p_fake, "p_fake")
    return -ad.mean(ad.log(p_fake))


# -- sampling -------------------------------------------------------------------

class LatentCursor:
    """Epoch-wise random permutation of latent indices, consumed in order."""

    def __init__(self, k: int):
        self.k = k
        self.perm: np.ndarray | None = None
        self.pos = 0

    def take(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if m > self.k:
            raise ValueError(f"batch {m} larger than latent set {self.k}")
        if self.perm is None or self.pos + m > self.k:
            self.perm = rng.permutation(self.k)
            self.pos = 0
        out = self.perm[self.pos:self.pos + m]
        self.pos += m
        return out


def sample_latents(Z: LatentSet, m: int, rng: np.random.Generator, cursor: LatentCursor) -> np.ndarray:
    if m == Z.k:
        return Z.latents
    return Z.latents[cursor.take(m, rng)]


def sample_minibatch(X: SampleSet, Z: LatentSet, m: int, rng: np.random.Generator,
                     cursor: LatentCursor) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(x_batch, z_batch)``.

    With ``m == n`` the whole of X is returned in order (and all of Z when
    ``k == n``) without touching ``rng``.
    """
    if m > X.n or m > Z.k:
        raise ValueError(f"batch size {m} exceeds n={X.n} or k={Z.k}")
    if m == X.n:
        x = X.samples
    else:
        x = X.samples[rng.integers(0, X.n, size=m)]
    return x, sample_latents(Z, m, rng, cursor)


def perturb_latent(z_batch: np.ndarray, noise_variance: float, rng: np.random.Generator) -> np.ndarray:
    """``z + eps`` with ``eps ~ N(0, noise_variance * I)``; identity at zero variance."""
    if noise_variance < 0:
        raise ValueError("noise_variance must be non-negative")
    if noise_variance == 0:
        return z_batch
    return z_batch + math.sqrt(noise_variance) * rng.standard_normal(z_batch.shape)


# -- state and steps --------------------------------------------------------------

@dataclass
class TrainState:
    t: int
    G: ParamStore
    D: ParamStore
    adam_g: Adam
    adam_d: Adam
    ema: EMA
    cursor: LatentCursor
    batch_rng: np.random.Generator
    noise_rng: np.random.Generator
    history: list[dict] = field(default_factory=list)
    d_updates: int = 0
    g_updates: int = 0


def _init_seeds(seed_train: int) -> tuple[int, int]:
    g_seed, d_seed = np.random.SeedSequence(seed_train).generate_state(2)
    return int(g_seed), int(d_seed)


def init_state(config: TrainConfig, X: SampleSet, Z: LatentSet) -> TrainState:
    config.validate()
    if X.n != config.n or Z.k != config.k or Z.latent_dim != config.latent_dim:
        raise ConfigError(f"data (n={X.n}, k={Z.k}, latent_dim={Z.latent_dim}) does not match config")
    head = "tanh" if X.domain == "image" else "identity"
    g_seed, d_seed = _init_seeds(config.seed_train)
    G = init_params(generator_spec(config.latent_dim, X.data_dim, config.g_hidden, head), g_seed)
    D = init_params(discriminator_spec(X.data_dim, config.d_hidden), d_seed)
    adam = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    return TrainState(
        t=0, G=G, D=D, adam_g=Adam(**adam), adam_d=Adam(**adam),
        ema=EMA(G, config.ema_decay), cursor=LatentCursor(Z.k),
        batch_rng=np.random.default_rng([config.seed_train, 1]),
        noise_rng=np.random.default_rng([config.seed_train, 2]),
    )


def _grads(leaves: dict[str, ad.Tensor]) -> dict[str, np.ndarray]:
    return {k: leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for k, leaf in leaves.items()}


def _abort(state: TrainState, phase: str, exc: Exception, **inputs) -> TrainingAborted:
    dump = {"iteration": state.t, "phase": phase, "error": repr(exc), **inputs}
    return TrainingAborted(f"non-finite value in {phase} step at iteration {state.t}: {exc}", dump)


def discriminator_step(state: TrainState, config: TrainConfig, X: SampleSet, Z: LatentSet) -> float:
    x_b, z_b = sample_minibatch(X, Z, config.m, state.batch_rng, state.cursor)
    z_hat = perturb_latent(z_b, config.noise_variance, state.noise_rng)
    try:
        fake = generator_forward(state.G, z_hat).data
        leaves = state.D.leaves()
        # real and fake share one forward so the power iteration advances once per step
        p = discriminator_forward(state.D, np.concatenate([x_b, fake]), train_mode=True, leaves=leaves)
        m = len(x_b)
        loss = d_loss(p[:m], p[m:])
        loss.backward()
        state.adam_d.step(state.D.params, _grads(leaves))
    except FloatingPointError as exc:
        raise _abort(state, "discriminator", exc, x_batch=x_b, z_batch=z_hat) from exc
    state.d_updates += 1
    return loss.item()


def generator_step(state: TrainState, config: TrainConfig, Z: LatentSet) -> float:
    z_b = sample_latents(Z, config.m, state.batch_rng, state.cursor)
    z_hat = perturb_latent(z_b, config.noise_variance, state.noise_rng)
    try:
        leaves = state.G.leaves()
        fake = generator_forward(state.G, z_hat, leaves=leaves)
        loss = g_loss(discriminator_forward(state.D, fake, train_mode=False))
        loss.backward()
        state.adam_g.step(state.G.params, _grads(leaves))
    except FloatingPointError as exc:
        raise _abort(state, "generator", exc, z_batch=z_hat) from exc
    state.ema.update(state.G)
    state.g_updates += 1
    return loss.item()


def train_step(state: TrainState, config: TrainConfig, X: SampleSet, Z: LatentSet) -> TrainState:
    """One discriminator update followed by one generator update.

    The generator step sees the already-updated discriminator and a freshly
    drawn latent batch.
    """
    ld = discriminator_step(state, config, X, Z)
    lg = generator_step(state, config, Z)
    if not (math.isfinite(ld) and math.isfinite(lg)):
        raise _abort(state, "loss", FloatingPointError("non-finite loss"), d_loss=ld, g_loss=lg)
    state.t += 1
    row = {"iteration": state.t, "d_loss": ld, "g_loss": lg}
    row.update({f"sigma_{lid}": s for lid, s in sorted(state.D.sigma_hat.items())})
    state.history.append(row)
    return state


@dataclass
class TrainResult:
    ema_params: ParamStore
    history: list[dict]
    iterations: int
    metric_trace: list[tuple[int, float]]
    state: TrainState
    stopped_early: bool = False


def train(config: TrainConfig, X: SampleSet, Z: LatentSet, checkpoint_dir=None,
          on_window: Callable[[int, float], None] | None = None) -> TrainResult:
    """Run ``train_step`` until ``max_iters`` or until convergence.

    Every ``convergence_window`` iterations the pixel-space mode-drop
    average of the EMA generator is measured; training stops once its
    relative change stays below ``convergence_tol`` for two consecutive
    windows.
    """
    state = init_state(config, X, Z)
    space = pixel_space(X.domain)
    query_count = min(config.eval_query_count, X.n)

    def metric() -> float:
        return mode_drop_metric(state.ema.shadow, Z, X, space, query_count, config.seed_eval).avg

    trace: list[tuple[int, float]] = []
    if config.max_iters > 0:
        trace.append((0, metric()))
    quiet_windows = 0
    stopped = False
    while state.t < config.max_iters:
        train_step(state, config, X, Z)
        if checkpoint_dir is not None and config.checkpoint_every and state.t % config.checkpoint_every == 0:
            save_state_checkpoint(state, Path(checkpoint_dir) / f"ckpt_{state.t:07d}.npz")
        if state.t % config.convergence_window == 0:
            value = metric()
            prev = trace[-1][1]
            trace.append((state.t, value))
            if on_window is not None:
                on_window(state.t, value)
            log.debug("iteration %d: mode-drop avg %.6g", state.t, value)
            rel = abs(value - prev) / max(abs(prev), 1e-12)
            quiet_windows = quiet_windows + 1 if rel < config.convergence_tol else 0
            if quiet_windows >= 2:
                stopped = True
                break
    return TrainResult(state.ema.shadow, state.history, state.t, trace, state, stopped)


def save_state_checkpoint(state: TrainState, path) -> Path:
    extra = {"t": np.array(state.t)}
    extra.update(state.adam_g.state_arrays("adam_g"))
    extra.update(state.adam_d.state_arrays("adam_d"))
    extra["ema_decay"] = np.array(state.ema.decay)
    return save_checkpoint(path, {"G": state.G, "D": state.D, "G_ema": state.ema.shadow}, extra)


def write_history_csv(history: list[dict], path) -> Path:
    """Loss history as CSV: iteration, d_loss, g_loss, one sigma column per D layer."""
    path = Path(path)
    columns = ["format_version", "iteration", "d_loss", "g_loss"]
    if history:
        columns += [c for c in history[0] if c.startswith("sigma_")]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in history:
            writer.writerow([HISTORY_VERSION] + [_fmt(row[c]) for c in columns[1:]])
    return path


def _fmt(value) -> str:
    return repr(int(value)) if isinstance(value, (int, np.integer)) else f"{float(value):.17g}"
