"""Bidirectional 1-NN evaluation: overfitting (generated -> data) and
mode drop (data -> generated), in pixel and feature spaces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .datasets import LatentSet, SampleSet
from .network import ParamStore, generator_forward

TOP_PERCENTS = (10, 5)
DEFAULT_QUERY_COUNT = 200
_CHUNK = 64


class FeatureEmbedder:
    """Frozen, randomly initialized MLP ``data_dim -> 128 -> 64``.

    Stands in for a pretrained backbone; only meaningful for comparisons
    made with the same seed.
    """

    def __init__(self, data_dim: int, seed: int = 0, hidden: int = 128, out_dim: int = 64):
        rng = np.random.default_rng(seed)
        self.data_dim = data_dim
        self.seed = seed
        self.w1 = rng.standard_normal((data_dim, hidden)) * np.sqrt(2.0 / data_dim)
        self.b1 = rng.standard_normal(hidden) * 0.1
        self.w2 = rng.standard_normal((hidden, out_dim)) * np.sqrt(1.0 / hidden)
        for arr in (self.w1, self.b1, self.w2):
            arr.setflags(write=False)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.data_dim:
            raise ValueError(f"embedder expects width {self.data_dim}, got {x.shape[1]}")
        h = x @ self.w1 + self.b1
        h = np.where(h > 0, h, 0.2 * h)
        return h @ self.w2


@dataclass(frozen=True)
class DistanceSpace:
    """``pixel_l1``: mean absolute difference, on [0, 255]-rescaled values
    when ``rescale`` is set (images), raw coordinates otherwise.
    ``feature_l2``: Euclidean distance between embeddings."""

    kind: str = "pixel_l1"
    rescale: bool = True
    embedder: FeatureEmbedder | None = None

    def __post_init__(self):
        if self.kind not in ("pixel_l1", "feature_l2"):
            raise ValueError(f"unknown distance space {self.kind!r}")
        if self.kind == "feature_l2" and self.embedder is None:
            raise ValueError("feature_l2 needs an embedder")

    @property
    def label(self) -> str:
        if self.kind == "pixel_l1":
            return "pixel"
        return f"feature(random,{self.embedder.seed})"

    def represent(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.kind == "feature_l2":
            return self.embedder(x)
        return (x + 1.0) * 127.5 if self.rescale else x


def pixel_space(domain: str = "planar2d") -> DistanceSpace:
    return DistanceSpace("pixel_l1", rescale=(domain == "image"))


def feature_space(data_dim: int, seed: int = 0) -> DistanceSpace:
    return DistanceSpace("feature_l2", embedder=FeatureEmbedder(data_dim, seed))


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def pixel_distance(a, b, rescale: bool = True) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    if rescale:
        a, b = (a + 1.0) * 127.5, (b + 1.0) * 127.5
    return float(np.mean(np.abs(a - b)))


def feature_distance(a, b, embedder: FeatureEmbedder) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    diff = embedder(a)[0] - embedder(b)[0]
    return float(np.sqrt(np.sum(diff * diff)))


@dataclass(frozen=True)
class NNResult:
    """Per-query nearest corpus index and its distance."""

    indices: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.indices)


def nn_search(queries, corpus, space: DistanceSpace) -> NNResult:
    """Exact brute-force 1-NN; ties go to the lowest corpus index."""
    corpus = np.atleast_2d(np.asarray(corpus, dtype=np.float64))
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if corpus.shape[0] == 0:
        raise ValueError("nn_search needs a non-empty corpus")
    if queries.shape[1] != corpus.shape[1]:
        raise ValueError(f"query width {queries.shape[1]} != corpus width {corpus.shape[1]}")
    q = space.represent(queries)
    c = space.represent(corpus)
    indices = np.empty(len(q), dtype=np.int64)
    distances = np.empty(len(q), dtype=np.float64)
    for lo in range(0, len(q), _CHUNK):
        diff = q[lo:lo + _CHUNK, None, :] - c[None, :, :]
        if space.kind == "pixel_l1":
            d = np.mean(np.abs(diff), axis=-1)
        else:
            d = np.sqrt(np.sum(diff * diff, axis=-1))
        best = np.argmin(d, axis=1)  # first occurrence on ties
        indices[lo:lo + _CHUNK] = best
        distances[lo:lo + _CHUNK] = d[np.arange(len(best)), best]
    return NNResult(indices, distances)


def _worst_count(count: int, percent: int) -> int:
    return -(-count * percent // 100)


def report_stats(distances: Sequence[float]) -> tuple[float, float, float]:
    """Mean distance and the mean of the worst 10% and 5% (sizes rounded up)."""
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("report_stats needs at least one distance")
    ordered = np.sort(d)[::-1]
    tops = [float(np.mean(ordered[:_worst_count(d.size, p)])) for p in TOP_PERCENTS]
    return float(np.mean(d)), tops[0], tops[1]


@dataclass(frozen=True)
class MetricsReport:
    direction: str  # "overfitting" or "mode_drop"
    space: str
    avg: float
    top10: float
    top5: float
    query_count: int
    seed_eval: int


Generator = Callable[[np.ndarray], np.ndarray]


def as_sampler(generator) -> Generator:
    """Accept a ParamStore or a plain callable mapping latents to samples."""
    if isinstance(generator, ParamStore):
        return lambda z: generator_forward(generator, z).data.astype(np.float64)
    return generator


def _latents(Z) -> np.ndarray:
    return Z.latents if isinstance(Z, LatentSet) else np.asarray(Z, dtype=np.float64)


def _samples(X) -> np.ndarray:
    return X.samples if isinstance(X, SampleSet) else np.asarray(X, dtype=np.float64)


def subsample_indices(total: int, count: int, seed_eval: int) -> np.ndarray:
    """Sorted without-replacement draw; ``count == total`` gives 0..total-1."""
    if count > total:
        raise ValueError(f"query_count {count} exceeds population {total}")
    rng = np.random.default_rng(seed_eval)
    return np.sort(rng.choice(total, size=count, replace=False))


def overfitting_metric(generator, Z, X, space: DistanceSpace, query_count: int = DEFAULT_QUERY_COUNT,
                       seed_eval: int = 0) -> MetricsReport:
    """1-NN distance from generated samples (from a subsample of Z) to all of X."""
    z = _latents(Z)
    idx = subsample_indices(len(z), query_count, seed_eval)
    generated = as_sampler(generator)(z[idx])
    result = nn_search(generated, _samples(X), space)
    return MetricsReport("overfitting", space.label, *report_stats(result.distances), query_count, seed_eval)


def mode_drop_metric(generator, Z, X, space: DistanceSpace, query_count: int = DEFAULT_QUERY_COUNT,
                     seed_eval: int = 0) -> MetricsReport:
    """1-NN distance from a subsample of X to every generated sample G(Z)."""
    x = _samples(X)
    idx = subsample_indices(len(x), query_count, seed_eval)
    generated = as_sampler(generator)(_latents(Z))
    result = nn_search(x[idx], generated, space)
    return MetricsReport("mode_drop", space.label, *report_stats(result.distances), query_count, seed_eval)


def evaluate(generator, Z, X, spaces: Sequence[DistanceSpace], query_count: int = DEFAULT_QUERY_COUNT,
             seed_eval: int = 0) -> list[MetricsReport]:
    """Both directions in every space, overfitting first."""
    reports = []
    for space in spaces:
        for metric in (overfitting_metric, mode_drop_metric):
            reports.append(metric(generator, Z, X, space, query_count, seed_eval))
    return reports


def modes_covered(generated: np.ndarray, centers: np.ndarray, within: float) -> np.ndarray:
    """Boolean per center: some generated point lies within ``within`` of it."""
    generated = np.asarray(generated, dtype=np.float64)
    d = np.sqrt(((centers[:, None, :] - generated[None, :, :]) ** 2).sum(-1))
    return d.min(axis=1) <= within
