"""Experiment configuration, regime sweeps, and persisted outputs.

A config file is flat ``key = value`` text with dotted section names::

    format_version = 1
    dataset.kind = ring
    dataset.modes = 8
    train.n = 512
    train.k = 512
    sweep = 512:0, 128:0, 32:0
    eval.spaces = pixel, feature
    output.dir = runs/ring

Each sweep entry is ``m:noise_variance``. Every output format written here
carries a leading format-version field.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .datasets import (LatentSet, MixtureSpec, SampleSet, load_image_dataset, make_fixed_latents,
                       make_gaussian_ring, to_bytes)
from .evaluation import MetricsReport, as_sampler, evaluate, feature_space, pixel_space
from .training import TrainConfig, save_state_checkpoint, train, write_history_csv

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
OUT_ENV = "STOCHGAN_OUT"
TABLE_COLUMNS = ["format_version", "dataset", "m", "noise", "direction", "space",
                 "avg", "top10", "top5", "query_count", "seed_eval"]

_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


@dataclass
class ExperimentConfig:
    dataset_name: str = "ring8"
    dataset_kind: str = "ring"
    mixture: MixtureSpec = field(default_factory=MixtureSpec)
    image_path: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: list[tuple[int, float]] = field(default_factory=lambda: [(512, 0.0)])
    spaces: list[str] = field(default_factory=lambda: ["pixel", "feature"])
    query_count: int = 200
    seed_eval: int = 0
    embedder_seed: int = 0
    output_dir: str = "runs/default"
    precision: str = "f64"

    def validate(self) -> "ExperimentConfig":
        if self.dataset_kind not in ("ring", "image"):
            raise ValueError(f"dataset.kind must be ring or image, got {self.dataset_kind!r}")
        if self.dataset_kind == "image" and not self.image_path:
            raise ValueError("dataset.path is required for image datasets")
        if not self.sweep:
            raise ValueError("sweep must contain at least one m:noise entry")
        for m, noise in self.sweep:
            self.entry_config(m, noise).validate()
        unknown = set(self.spaces) - {"pixel", "feature"}
        if unknown:
            raise ValueError(f"unknown eval spaces {sorted(unknown)}")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be f32 or f64")
        return self

    def entry_config(self, m: int, noise: float) -> TrainConfig:
        return dataclasses.replace(self.train, m=m, noise_variance=noise)

    # -- text form ------------------------------------------------------------

    def semantic_items(self) -> list[tuple[str, str]]:
        """Every field that affects results, as canonical key/value strings."""
        items = [
            ("dataset.name", self.dataset_name),
            ("dataset.kind", self.dataset_kind),
        ]
        if self.dataset_kind == "ring":
            items += [("dataset.modes", str(self.mixture.modes)),
                      ("dataset.radius", _num(self.mixture.radius)),
                      ("dataset.std", _num(self.mixture.std))]
        else:
            items.append(("dataset.path", str(self.image_path)))
        for name in _TRAIN_FIELDS:
            if name in ("m", "noise_variance"):
                continue
            items.append((f"train.{name}", _format_value(getattr(self.train, name))))
        items += [
            ("sweep", ", ".join(f"{m}:{_num(noise)}" for m, noise in self.sweep)),
            ("eval.spaces", ", ".join(self.spaces)),
            ("eval.query_count", str(self.query_count)),
            ("eval.seed_eval", str(self.seed_eval)),
            ("eval.embedder_seed", str(self.embedder_seed)),
            ("run.precision", self.precision),
        ]
        return items

    def to_text(self) -> str:
        lines = [f"format_version = {FORMAT_VERSION}"]
        lines += [f"{k} = {v}" for k, v in self.semantic_items()]
        lines.append(f"output.dir = {self.output_dir}")
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        canon = "\n".join(f"{k}={v}" for k, v in self.semantic_items())
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _num(x: float) -> str:
    return repr(float(x))


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, template):
    if isinstance(template, bool):
        if text.lower() not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return text.lower() == "true"
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    if isinstance(template, tuple):
        return tuple(int(v) for v in text.split(",") if v.strip())
    return text


def parse_config(text: str) -> ExperimentConfig:
    """Parse the flat dotted key/value format. Unknown keys are errors."""
    cfg = ExperimentConfig()
    mixture = dataclasses.asdict(cfg.mixture)
    train_kw: dict = {}
    seen_version = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "format_version":
            if int(value) != FORMAT_VERSION:
                raise ValueError(f"unsupported config format_version {value}")
            seen_version = True
        elif key == "dataset.name":
            cfg.dataset_name = value
        elif key == "dataset.kind":
            cfg.dataset_kind = value
        elif key == "dataset.path":
            cfg.image_path = value
        elif key in ("dataset.modes", "dataset.radius", "dataset.std"):
            name = key.split(".", 1)[1]
            mixture[name] = int(value) if name == "modes" else float(value)
        elif key.startswith("train."):
            name = key.split(".", 1)[1]
            if name not in _TRAIN_FIELDS:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            train_kw[name] = _parse_value(value, getattr(cfg.train, name))
        elif key == "sweep":
            cfg.sweep = parse_sweep(value)
        elif key == "eval.spaces":
            cfg.spaces = [s.strip() for s in value.split(",") if s.strip()]
        elif key in ("eval.query_count", "eval.seed_eval", "eval.embedder_seed"):
            setattr(cfg, key.split(".", 1)[1], int(value))
        elif key == "output.dir":
            cfg.output_dir = value
        elif key == "run.precision":
            cfg.precision = value
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    if not seen_version:
        raise ValueError("config is missing format_version")
    cfg.mixture = MixtureSpec(**mixture)
    cfg.train = dataclasses.replace(cfg.train, **train_kw)
    if OUT_ENV in os.environ:
        cfg.output_dir = os.environ[OUT_ENV]
    return cfg


def parse_sweep(text: str) -> list[tuple[int, float]]:
    entries = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        m, _, noise = item.partition(":")
        entries.append((int(m), float(noise or 0.0)))
    return entries


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# -- data --------------------------------------------------------------------------

def build_data(cfg: ExperimentConfig) -> tuple[SampleSet, LatentSet]:
    t = cfg.train
    if cfg.dataset_kind == "ring":
        X = make_gaussian_ring(cfg.mixture, t.n, t.seed_data)
    else:
        X = load_image_dataset(cfg.image_path, t.n)
    Z = make_fixed_latents(t.k, t.latent_dim, t.seed_latent)
    return X, Z


def build_spaces(cfg: ExperimentConfig, X: SampleSet):
    spaces = []
    for name in cfg.spaces:
        if name == "pixel":
            spaces.append(pixel_space(X.domain))
        else:
            spaces.append(feature_space(X.data_dim, cfg.embedder_seed))
    return spaces


# -- records -----------------------------------------------------------------------

@dataclass
class EntryRecord:
    m: int
    noise: float
    iterations: int
    stopped_early: bool
    reports: list[MetricsReport]
    history_path: str
    checkpoint_path: str
    grid_path: str


@dataclass
class RunRecord:
    config_text: str
    config_hash: str
    dataset: str
    entries: list[EntryRecord] = field(default_factory=list)
    status: str = "running"
    error: str | None = None
    duration_s: float = 0.0
    table_path: str | None = None

    def to_json(self) -> dict:
        return {"format_version": FORMAT_VERSION, **dataclasses.asdict(self)}

    @classmethod
    def from_json(cls, obj: dict) -> "RunRecord":
        obj = dict(obj)
        obj.pop("format_version", None)
        entries = []
        for e in obj.pop("entries"):
            e = dict(e)
            e["reports"] = [MetricsReport(**r) for r in e["reports"]]
            entries.append(EntryRecord(**e))
        return cls(entries=entries, **obj)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))


def load_run_record(path) -> RunRecord:
    path = Path(path)
    if path.is_dir():
        path = path / "run_record.json"
    obj = json.loads(path.read_text())
    if obj.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported run record version {obj.get('format_version')}")
    return RunRecord.from_json(obj)


# -- grids ---------------------------------------------------------------------------

def grid_shape(count: int) -> tuple[int, int]:
    """(rows, cols) of the most square layout holding ``count`` tiles."""
    if count < 1:
        raise ValueError("need at least one sample")
    cols = math.isqrt(count - 1) + 1
    rows = -(-count // cols)
    return rows, cols


def emit_grid(samples, path, image_shape: tuple[int, int, int] | None = None,
              reference=None) -> Path:
    """Write samples as a tiled portable pixel map or, for planar data, an SVG.

    Images are mapped from [-1, 1] to bytes (round half up) and tiled without
    padding, rows first. Planar samples are drawn as a scatter over the
    optional ``reference`` points.
    """
    path = Path(path)
    if isinstance(samples, SampleSet):
        image_shape = image_shape or samples.image_shape
        arr = samples.samples
    else:
        arr = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if image_shape is not None:
        _write_pnm(arr, image_shape, path)
    else:
        ref = reference.samples if isinstance(reference, SampleSet) else reference
        _write_svg(arr, ref, path)
    return path


def _write_pnm(arr: np.ndarray, image_shape, path: Path) -> None:
    h, w, c = image_shape
    if c not in (1, 3):
        raise ValueError("portable maps support 1 or 3 channels")
    rows, cols = grid_shape(len(arr))
    canvas = np.zeros((rows * h, cols * w, c), dtype=np.uint8)
    tiles = to_bytes(arr.reshape(len(arr), h, w, c))
    for i, tile in enumerate(tiles):
        r, q = divmod(i, cols)
        canvas[r * h:(r + 1) * h, q * w:(q + 1) * w] = tile
    magic = b"P6" if c == 3 else b"P5"
    header = magic + b"\n# format-version %d\n%d %d\n255\n" % (FORMAT_VERSION, cols * w, rows * h)
    with open(path, "wb") as fh:
        fh.write(header + canvas.tobytes())


def _write_svg(points: np.ndarray, reference, path: Path, size: int = 480) -> None:
    sets = [("#1f77b4", reference), ("#d62728", points)]
    every = np.concatenate([p for _, p in sets if p is not None])
    lo, hi = every.min(axis=0), every.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    pad = 0.05 * span

    def xy(p):
        x = (p[0] - lo[0] + pad) / (span + 2 * pad) * size
        y = size - (p[1] - lo[1] + pad) / (span + 2 * pad) * size
        return f"{x:.2f}", f"{y:.2f}"

    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f"<!-- format-version {FORMAT_VERSION} -->",
           f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    for color, pts in sets:
        if pts is None:
            continue
        label = "data" if pts is reference else "generated"
        out.append(f'<g class="{label}" fill="{color}" fill-opacity="0.6">')
        for p in np.asarray(pts):
            x, y = xy(p)
            out.append(f'<circle cx="{x}" cy="{y}" r="2"/>')
        out.append("</g>")
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")


# -- tables ----------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def report_row(dataset: str, m: int, noise: float, r: MetricsReport) -> list[str]:
    return [str(FORMAT_VERSION), dataset, str(m), _fmt(noise), r.direction, r.space,
            _fmt(r.avg), _fmt(r.top10), _fmt(r.top5), str(r.query_count), str(r.seed_eval)]


def emit_table(records: Sequence[RunRecord], path) -> Path:
    """One CSV row per (dataset, m, noise, direction, space)."""
    rows = [report_row(rec.dataset, e.m, e.noise, r)
            for rec in records for e in rec.entries for r in e.reports]
    if not rows:
        raise ValueError("no metric rows to write")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        writer.writerows(rows)
    return path


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- orchestration -------------------------------------------------------------------------

def entry_dirname(m: int, noise: float) -> str:
    return f"m{m}_noise{_num(noise)}"


def run_entry(cfg: ExperimentConfig, m: int, noise: float, X: SampleSet, Z: LatentSet,
              out: Path) -> EntryRecord:
    """Train one (m, noise) regime, evaluate it, and persist its outputs."""
    out.mkdir(parents=True, exist_ok=True)
    tcfg = cfg.entry_config(m, noise)
    result = train(tcfg, X, Z, checkpoint_dir=out)
    history_path = write_history_csv(result.history, out / "loss_history.csv")
    ckpt_path = save_state_checkpoint(result.state, out / "final.npz")
    G = result.ema_params
    reports = evaluate(G, Z, X, build_spaces(cfg, X), min(cfg.query_count, X.n, Z.k), cfg.seed_eval)
    generated = as_sampler(G)(Z.latents)
    if X.domain == "image":
        grid = emit_grid(generated[:64], out / "samples.ppm", X.image_shape)
    else:
        grid = emit_grid(generated, out / "samples.svg", reference=X)
    return EntryRecord(m, noise, result.iterations, result.stopped_early, reports,
                       str(history_path), str(ckpt_path), str(grid))


def run_experiment(cfg: ExperimentConfig) -> RunRecord:
    """Train and evaluate every sweep entry; write run_record.json and table.csv.

    X and Z are built once and shared by all entries. If an entry fails the
    record is saved with status "incomplete" and the error re-raised.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    record = RunRecord(cfg.to_text(), cfg.content_hash(), cfg.dataset_name)
    record_path = out / "run_record.json"
    start = time.perf_counter()
    with ad.precision(cfg.precision):
        X, Z = build_data(cfg)
        try:
            for m, noise in cfg.sweep:
                log.info("training m=%d noise=%s", m, noise)
                record.entries.append(run_entry(cfg, m, noise, X, Z, out / entry_dirname(m, noise)))
                record.duration_s = time.perf_counter() - start
                record.save(record_path)
        except Exception as exc:
            record.status = "incomplete"
            record.error = repr(exc)
            record.duration_s = time.perf_counter() - start
            record.save(record_path)
            raise
    record.table_path = str(emit_table([record], out / "table.csv"))
    record.status = "complete"
    record.duration_s = time.perf_counter() - start
    record.save(record_path)
    return record


def evaluate_checkpoint(cfg: ExperimentConfig, checkpoint, key: str = "G_ema") -> list[MetricsReport]:
    """Reports for a saved generator against the config's X and Z."""
    from .network import load_checkpoint

    with ad.precision(cfg.precision):
        X, Z = build_data(cfg)
        stores, _ = load_checkpoint(checkpoint)
        return evaluate(stores[key], Z, X, build_spaces(cfg, X), min(cfg.query_count, X.n, Z.k), cfg.seed_eval)

