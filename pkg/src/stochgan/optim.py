"""ADAM updates and an exponential moving average of generator weights."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .network import ParamStore


class NonFiniteGradientError(FloatingPointError):
    pass


class Adam:
    """ADAM with bias correction, operating in place on a dict of arrays.

    Defaults follow the GAN recipe used throughout this package:
    lr 1e-4, beta1 0, beta2 0.9.
    """

    def __init__(self, lr: float = 1e-4, beta1: float = 0.0, beta2: float = 0.9, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        if set(params) != set(grads):
            raise KeyError(f"gradient keys {sorted(grads)} do not match parameters {sorted(params)}")
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        if bad:
            raise NonFiniteGradientError(f"non-finite gradient for {bad} at step {self.t + 1}")

        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}/t": np.array(self.t)}
        for k in self.m:
            out[f"{prefix}/m/{k}"] = self.m[k]
            out[f"{prefix}/v/{k}"] = self.v[k]
        return out

    def load_state_arrays(self, prefix: str, arrays: Mapping[str, np.ndarray]) -> None:
        self.t = int(arrays[f"{prefix}/t"])
        for name, value in arrays.items():
            if name.startswith(f"{prefix}/m/"):
                self.m[name[len(prefix) + 3:]] = np.array(value)
            elif name.startswith(f"{prefix}/v/"):
                self.v[name[len(prefix) + 3:]] = np.array(value)


class EMA:
    """Shadow copy of a ParamStore: ``shadow = decay * shadow + (1 - decay) * live``."""

    def __init__(self, params: ParamStore, decay: float = 0.999):
        if not 0.0 <= decay <= 1.0:
            raise ValueError(f"decay must lie in [0, 1], got {decay}")
        self.decay = decay
        self.shadow = params.copy()

    def update(self, params: ParamStore) -> None:
        for k, s in self.shadow.params.items():
            p = params.params[k]
            if p.shape != s.shape:
                raise ValueError(f"{k}: shape {p.shape} does not match shadow {s.shape}")
            s *= self.decay
            s += (1.0 - self.decay) * p
