"""Generator and discriminator MLPs, spectral normalization, checkpoints.

Dense layers compute ``x @ W + b`` with ``W`` of shape (in_dim, out_dim).
Every dense layer of the discriminator is spectrally normalized; its power
iteration vector lives in ``ParamStore.u_state`` and persists across steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad

LEAKY_SLOPE = 0.2
PROB_EPS = 1e-7
NORM_EPS = 1e-12
CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("leaky_relu", "tanh", "sigmoid")


class DegenerateWeightError(ValueError):
    """The weight matrix is (numerically) zero, so it has no spectral norm."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int = 0
    out_dim: int = 0
    spectral_norm: bool = False

    def __post_init__(self):
        if self.kind == "dense":
            if self.in_dim < 1 or self.out_dim < 1:
                raise ValueError(f"dense layer needs positive dims, got {self.in_dim}->{self.out_dim}")
        elif self.kind in _ACTIVATIONS:
            if self.spectral_norm:
                raise ValueError("spectral_norm applies to dense layers only")
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer list plus input/output widths.

    ``role`` is "generator" or "discriminator".
    """

    role: str
    layers: tuple[LayerSpec, ...]
    input_dim: int
    output_dim: int

    def __post_init__(self):
        width = self.input_dim
        for layer in self.layers:
            if layer.kind == "dense":
                if layer.in_dim != width:
                    raise ValueError(f"layer dims do not chain: expected in_dim {width}, got {layer.in_dim}")
                width = layer.out_dim
        if width != self.output_dim:
            raise ValueError(f"final width {width} != output_dim {self.output_dim}")
        last = self.layers[-1].kind if self.layers else None
        if self.role == "discriminator" and last != "sigmoid":
            raise ValueError("discriminator must end in sigmoid")
        if self.role == "generator" and last not in ("tanh", "dense"):
            raise ValueError("generator must end in tanh or a linear (identity) head")

    @property
    def dense_ids(self) -> list[str]:
        return [f"dense{i}" for i, layer in enumerate(self.layers) if layer.kind == "dense"]

    def to_json(self) -> dict:
        return {
            "role": self.role,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "layers": [vars(layer).copy() for layer in self.layers],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "NetworkSpec":
        return cls(obj["role"], tuple(LayerSpec(**l) for l in obj["layers"]),
                   obj["input_dim"], obj["output_dim"])


def generator_spec(latent_dim: int, data_dim: int, hidden: Sequence[int] = (128, 256),
                   head: str = "identity") -> NetworkSpec:
    """MLP generator ``latent_dim -> hidden... -> data_dim``.

    ``head`` is "tanh" for images in [-1, 1] and "identity" for planar data.
    """
    if head not in ("tanh", "identity"):
        raise ValueError(f"head must be 'tanh' or 'identity', got {head!r}")
    layers: list[LayerSpec] = []
    width = latent_dim
    for h in hidden:
        layers += [LayerSpec("dense", width, h), LayerSpec("leaky_relu")]
        width = h
    layers.append(LayerSpec("dense", width, data_dim))
    if head == "tanh":
        layers.append(LayerSpec("tanh"))
    return NetworkSpec("generator", tuple(layers), latent_dim, data_dim)


def discriminator_spec(data_dim: int, hidden: Sequence[int] = (256, 128)) -> NetworkSpec:
    layers: list[LayerSpec] = []
    width = data_dim
    for h in hidden:
        layers += [LayerSpec("dense", width, h, spectral_norm=True), LayerSpec("leaky_relu")]
        width = h
    layers += [LayerSpec("dense", width, 1, spectral_norm=True), LayerSpec("sigmoid")]
    return NetworkSpec("discriminator", tuple(layers), data_dim, 1)


@dataclass
class ParamStore:
    """Weights and biases by name ("dense0.weight", "dense0.bias", ...).

    ``u_state`` holds the unit power-iteration vector of each spectrally
    normalized layer, ``sigma_hat`` the most recent spectral-norm estimate.
    """

    spec: NetworkSpec
    params: dict[str, np.ndarray]
    u_state: dict[str, np.ndarray] = field(default_factory=dict)
    sigma_hat: dict[str, float] = field(default_factory=dict)

    def copy(self) -> "ParamStore":
        return ParamStore(self.spec, {k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.u_state.items()}, dict(self.sigma_hat))

    def names(self) -> list[str]:
        return list(self.params)

    def leaves(self) -> dict[str, ad.Tensor]:
        """Fresh gradient-tracking leaf tensors for every parameter."""
        return {k: ad.Tensor(v, requires_grad=True, name=k) for k, v in self.params.items()}


def init_params(spec: NetworkSpec, seed: int) -> ParamStore:
    """Scaled-normal weights, zero biases, random unit ``u`` vectors.

    Weight std is sqrt(2 / in_dim) when a leaky_relu follows the layer and
    sqrt(1 / in_dim) otherwise.
    """
    rng = np.random.default_rng(seed)
    dtype = ad.get_dtype()
    params: dict[str, np.ndarray] = {}
    u_state: dict[str, np.ndarray] = {}
    for i, layer in enumerate(spec.layers):
        if layer.kind != "dense":
            continue
        nxt = spec.layers[i + 1].kind if i + 1 < len(spec.layers) else None
        gain = 2.0 if nxt == "leaky_relu" else 1.0
        std = np.sqrt(gain / layer.in_dim)
        params[f"dense{i}.weight"] = (rng.standard_normal((layer.in_dim, layer.out_dim)) * std).astype(dtype)
        params[f"dense{i}.bias"] = np.zeros(layer.out_dim, dtype=dtype)
        if layer.spectral_norm:
            u = rng.standard_normal(layer.in_dim)
            u_state[f"dense{i}"] = (u / np.linalg.norm(u)).astype(dtype)
    return ParamStore(spec, params, u_state)


def _l2_normalize(v: np.ndarray) -> np.ndarray:
    return v / (np.linalg.norm(v) + NORM_EPS)


def _power_step(W: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = _l2_normalize(W.T @ u)
    u = _l2_normalize(W @ v)
    return u, v


def spectral_normalize(W: np.ndarray, u_state: np.ndarray, n_iters: int = 1):
    """Estimate the top singular value of ``W`` by power iteration.

    Returns ``(W / sigma_hat, u_new, sigma_hat)``. ``u_state`` has length
    ``W.shape[0]`` and should be carried over between calls.
    """
    W = np.asarray(W)
    if n_iters < 1:
        raise ValueError("n_iters must be positive")
    if np.linalg.norm(W) < NORM_EPS:
        raise DegenerateWeightError("cannot spectrally normalize a zero matrix")
    u = np.asarray(u_state)
    for _ in range(n_iters):
        u, v = _power_step(W, u)
    sigma = float(u @ W @ v)
    return W / sigma, u, sigma


def _dense(x: ad.Tensor, W: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match layer in_dim {W.shape[0]}")
    return ad.matmul(x, W) + b


def _spectral_weight(store: ParamStore, lid: str, W: ad.Tensor, advance: bool) -> ad.Tensor:
    """W / sigma with sigma = u^T W v; u and v are treated as constants."""
    if np.linalg.norm(W.data) < NORM_EPS:
        raise DegenerateWeightError(f"{lid}: weight matrix is zero")
    u = store.u_state[lid]
    if advance:
        u, v = _power_step(W.data, u)
        store.u_state[lid] = u
    else:
        v = _l2_normalize(W.data.T @ u)
    sigma = ad.matmul(ad.matmul(ad.Tensor(u[None, :]), W), ad.Tensor(v[:, None]))
    store.sigma_hat[lid] = sigma.item()
    return ad.div(W, sigma)


def _run(store: ParamStore, x, leaves: Mapping[str, ad.Tensor] | None, advance_sn: bool) -> ad.Tensor:
    spec = store.spec
    h = ad.as_tensor(x)
    if h.data.ndim != 2 or h.shape[1] != spec.input_dim:
        raise ValueError(f"expected input of shape (batch, {spec.input_dim}), got {h.shape}")
    if leaves is None:
        leaves = {k: ad.Tensor(v) for k, v in store.params.items()}
    for i, layer in enumerate(spec.layers):
        if layer.kind == "dense":
            lid = f"dense{i}"
            W = leaves[f"{lid}.weight"]
            if layer.spectral_norm:
                W = _spectral_weight(store, lid, W, advance_sn)
            h = _dense(h, W, leaves[f"{lid}.bias"])
        elif layer.kind == "leaky_relu":
            h = ad.leaky_relu(h, LEAKY_SLOPE)
        elif layer.kind == "tanh":
            h = ad.tanh(h)
        elif layer.kind == "sigmoid":
            h = ad.sigmoid(h)
    return h


def generator_forward(params: ParamStore, z_batch, leaves: Mapping[str, ad.Tensor] | None = None) -> ad.Tensor:
    """Map a (batch, latent_dim) array to (batch, data_dim) samples.

    Pass ``leaves`` (from :meth:`ParamStore.leaves`) to differentiate with
    respect to the parameters; otherwise parameters enter as constants.
    """
    return _run(params, z_batch, leaves, advance_sn=False)


def discriminator_forward(params: ParamStore, x_batch, train_mode: bool = False,
                          leaves: Mapping[str, ad.Tensor] | None = None) -> ad.Tensor:
    """Probabilities of shape (batch, 1), clamped to [1e-7, 1 - 1e-7].

    In ``train_mode`` each spectrally normalized layer runs one power
    iteration and stores the refined ``u`` back into ``params``.
    """
    p = _run(params, x_batch, leaves, advance_sn=train_mode)
    return ad.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def save_checkpoint(path, stores: Mapping[str, ParamStore], extra: Mapping[str, np.ndarray] | None = None) -> Path:
    """Write parameter stores (and optional extra arrays) to an ``.npz`` file.

    Arrays are stored under "<store>/<name>", u vectors under
    "<store>/u/<layer>". Round-trips bit-exactly.
    """
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    meta = {"format_version": CHECKPOINT_VERSION, "stores": {}}
    for key, store in stores.items():
        meta["stores"][key] = store.spec.to_json()
        for name, value in store.params.items():
            arrays[f"{key}/{name}"] = value
        for lid, u in store.u_state.items():
            arrays[f"{key}/u/{lid}"] = u
    for name, value in (extra or {}).items():
        arrays[f"extra/{name}"] = np.asarray(value)
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[dict[str, ParamStore], dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        stores = {}
        for key, spec_json in meta["stores"].items():
            spec = NetworkSpec.from_json(spec_json)
            params, u_state = {}, {}
            prefix = f"{key}/"
            for name in data.files:
                if not name.startswith(prefix):
                    continue
                rest = name[len(prefix):]
                if rest.startswith("u/"):
                    u_state[rest[2:]] = data[name]
                else:
                    params[rest] = data[name]
            stores[key] = ParamStore(spec, params, u_state)
        extra = {n[len("extra/"):]: data[n] for n in data.files if n.startswith("extra/")}
    return stores, extra
