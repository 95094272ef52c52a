"""Fixed real-sample sets, fixed latent sets, and the binary image container."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGE_MAGIC = b"SGIM"
IMAGE_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, count, h, w, c


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SampleSet:
    """The fixed training set X, shape (n, data_dim).

    ``domain`` is "planar2d" or "image"; image sets carry ``image_shape``
    (h, w, c) and hold values in [-1, 1].
    """

    samples: np.ndarray
    domain: str = "planar2d"
    image_shape: tuple[int, int, int] | None = None
    labels: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(self.samples))
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be 2-D (n, data_dim), got shape {self.samples.shape}")
        if self.domain not in ("planar2d", "image"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.domain == "image":
            if self.image_shape is None or int(np.prod(self.image_shape)) != self.samples.shape[1]:
                raise ValueError("image sets need image_shape matching data_dim")
            if self.samples.size and (self.samples.min() < -1 or self.samples.max() > 1):
                raise ValueError("image samples must lie in [-1, 1]")
        if self.labels is not None:
            labels = np.array(self.labels)
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def data_dim(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class LatentSet:
    """The fixed latent set Z, shape (k, latent_dim)."""

    latents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "latents", _frozen(self.latents))
        if self.latents.ndim != 2:
            raise ValueError("latents must be 2-D (k, latent_dim)")

    @property
    def k(self) -> int:
        return self.latents.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.latents.shape[1]


@dataclass(frozen=True)
class MixtureSpec:
    """Equal-weight isotropic Gaussian mixture on a ring of ``modes`` centers."""

    modes: int = 8
    radius: float = 2.0
    std: float = 0.05

    def __post_init__(self):
        if self.modes < 1:
            raise ValueError("need at least one mode")
        if self.std <= 0:
            raise ValueError("std must be positive")

    def centers(self) -> np.ndarray:
        angles = 2.0 * np.pi * np.arange(self.modes) / self.modes
        return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def make_fixed_latents(k: int, latent_dim: int, seed: int) -> LatentSet:
    if k < 1 or latent_dim < 1:
        raise ValueError("k and latent_dim must be positive")
    rng = np.random.default_rng(seed)
    return LatentSet(rng.standard_normal((k, latent_dim)))


def make_gaussian_ring(spec: MixtureSpec, n: int, seed: int) -> SampleSet:
    """Exactly n / modes samples per mode; rows are grouped by mode."""
    if n % spec.modes:
        raise ValueError(f"n={n} is not divisible by the number of modes {spec.modes}")
    rng = np.random.default_rng(seed)
    per_mode = n // spec.modes
    labels = np.repeat(np.arange(spec.modes), per_mode)
    centers = spec.centers()[labels]
    samples = centers + spec.std * rng.standard_normal((n, 2))
    return SampleSet(samples, "planar2d", labels=labels)


def to_bytes(values: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to [0, 255], rounding half up."""
    scaled = (np.clip(values, -1.0, 1.0) + 1.0) * 127.5
    return np.floor(scaled + 0.5).astype(np.uint8)


def from_bytes(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 127.5 - 1.0


def save_image_dataset(path, images: np.ndarray) -> Path:
    """Write (count, h, w, c) images in [-1, 1] to the binary container."""
    images = np.asarray(images)
    if images.ndim != 4:
        raise ValueError("images must have shape (count, h, w, c)")
    count, h, w, c = images.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(IMAGE_MAGIC, IMAGE_VERSION, count, h, w, c))
        fh.write(to_bytes(images).tobytes(order="C"))
    return path


def _read_pnm(blob: bytes) -> np.ndarray:
    """Parse a binary P5/P6 map, skipping comment lines. Returns (h, w, c)."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace before the raster
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise ValueError("only 8-bit binary P5/P6 maps are supported")
    c = 3 if magic == b"P6" else 1
    raster = np.frombuffer(blob, dtype=np.uint8, count=h * w * c, offset=pos)
    return raster.reshape(h, w, c)


def load_image_dataset(path, n: int | None = None,
                       target_range: tuple[float, float] = (-1.0, 1.0)) -> SampleSet:
    """Load the first ``n`` images, mapping bytes linearly onto ``target_range``.

    Reads the binary container (header: magic, version, count, h, w, c,
    then row-major uint8 pixels) or a single binary P5/P6 portable map,
    which is treated as one image.
    """
    blob = Path(path).read_bytes()
    if blob[:2] in (b"P5", b"P6"):
        images = _read_pnm(blob)[None]
    else:
        if len(blob) < _HEADER.size:
            raise ValueError("file too short for image header")
        magic, version, count, h, w, c = _HEADER.unpack_from(blob)
        if magic != IMAGE_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if version != IMAGE_VERSION:
            raise ValueError(f"unsupported image container version {version}")
        expected = count * h * w * c
        body = np.frombuffer(blob, dtype=np.uint8, offset=_HEADER.size)
        if body.size != expected:
            raise ValueError(f"pixel payload has {body.size} bytes, header declares {expected}")
        images = body.reshape(count, h, w, c)
    count = images.shape[0]
    n = count if n is None else n
    if n > count:
        raise ValueError(f"requested {n} images but file holds {count}")
    images = images[:n]
    shape = tuple(int(s) for s in images.shape[1:])
    flat = images.reshape(n, -1)
    lo, hi = target_range
    values = from_bytes(flat) if (lo, hi) == (-1.0, 1.0) else lo + flat.astype(np.float64) * ((hi - lo) / 255.0)
    return SampleSet(values, "image", image_shape=shape)
