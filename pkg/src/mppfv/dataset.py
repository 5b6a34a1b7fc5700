"""Dataset plumbing: PGM/PPM files, dataset manifests, synthetic images.

The synthetic generator draws textured-shape classes whose identity lives
in the coarse layout, with an optional per-pixel noise field on top. At
small pyramid scales downsampling averages the noise away, while patches
cut from the native resolution see mostly noise -- the property the
scale-sweep experiments rely on.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .errors import InputError

SYNTHETIC_KINDS = ("blob", "blob-tl", "blob-br", "vband", "hstripes", "checker",
                   "boxed", "plain")


# ---------------------------------------------------------------------------
# PGM / PPM

def read_pnm(path: str | Path) -> np.ndarray:
    """Read a P2/P3/P5/P6 image as (C, H, W) float32 scaled to [0, 1]."""
    data = Path(path).read_bytes()
    if not data[:2] in (b"P2", b"P3", b"P5", b"P6"):
        raise InputError(f"{path}: not a PGM/PPM file")
    kind = data[:2].decode()

    tokens: list[int] = []
    pos = 2
    # Header: width, height, maxval with comment lines allowed.
    while len(tokens) < 3:
        match = re.match(rb"(?:\s+|#[^\n]*\n)*(\d+)", data[pos:])
        if match is None:
            raise InputError(f"{path}: truncated header")
        tokens.append(int(match.group(1)))
        pos += match.end()
    width, height, maxval = tokens
    channels = 3 if kind in ("P3", "P6") else 1
    count = width * height * channels

    if kind in ("P5", "P6"):
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    else:
        raw = np.array(data[pos:].split()[:count], dtype=np.int64)
    if raw.size != count:
        raise InputError(f"{path}: expected {count} samples, found {raw.size}")

    img = raw.astype(np.float32).reshape(height, width, channels) / maxval
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def write_pnm(path: str | Path, image: np.ndarray) -> None:
    """Write (H, W), (1, H, W) or (3, H, W) values in [0, 1] as binary PGM/PPM."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise InputError(f"expected 1- or 3-channel image, got shape {image.shape}")
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    kind = "P5" if image.shape[0] == 1 else "P6"
    h, w = image.shape[1], image.shape[2]
    body = pixels[0] if kind == "P5" else pixels.transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"{kind}\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(body).tobytes())


# ---------------------------------------------------------------------------
# Synthetic images

def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(size, dtype=np.float64) + 0.5) / size
    return np.meshgrid(coords, coords, indexing="ij")  # (y, x)

BG, FG = 0.25, 0.75


def _texture_field(rng: np.random.Generator, size: int, amplitude: float,
                   components: int = 3) -> np.ndarray:
    """Per-image high-frequency texture: coherent inside one image, random
    across images, and near-invisible after downsampling.

    Each component is a sinusoid of 2-3 pixel period with a random
    orientation and phase, so local patches at native resolution all see the
    same (image-specific) texture while a 4x-downsampled view averages it
    out. This is what makes fine pyramid scales carry image noise rather
    than class signal.
    """
    yy, xx = _grid(size)
    field = np.zeros((size, size))
    for _ in range(components):
        theta = rng.uniform(0.0, np.pi)
        period_px = rng.uniform(2.0, 3.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        freq = size / period_px
        field += np.sin(2.0 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy)
                        + phase)
    return amplitude * field / np.sqrt(components)


def _clutter_field(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray,
                   count: int) -> np.ndarray:
    """Small foreground disks at per-image random spots: fine detail made of
    the same material as the class shapes, so local patches cannot tell
    clutter from object while downsampled views shrink it to specks."""
    mask = np.zeros(yy.shape, dtype=bool)
    for _ in range(count):
        cx, cy = rng.uniform(0.05, 0.95, size=2)
        radius = rng.uniform(0.05, 0.10)
        mask |= (xx - cx) ** 2 + (yy - cy) ** 2 < radius ** 2
    return mask


def synth_image(kind: str, seed: int, size: int = 128, noise: float = 0.0,
                texture: float = 0.0, clutter: int = 0) -> np.ndarray:
    """One grayscale class image; per-image randomness is fully seeded.

    `noise` adds iid per-pixel Gaussian noise; `texture` adds a per-image
    high-frequency texture field; `clutter` scatters that many small
    foreground disks (class-independent fine detail).
    """
    rng = np.random.default_rng(seed)
    yy, xx = _grid(size)
    img = np.full((size, size), BG)

    if kind == "blob":
        cx, cy = rng.uniform(0.3, 0.7, size=2)
        radius = rng.uniform(0.18, 0.26)
        img = np.where((xx - cx) ** 2 + (yy - cy) ** 2 < radius ** 2, FG, BG)
    elif kind in ("blob-tl", "blob-br"):
        # Same local appearance, different global position: only views wide
        # enough to see where the disk sits can tell these two apart.
        base = 0.30 if kind == "blob-tl" else 0.70
        cx, cy = base + rng.uniform(-0.06, 0.06, size=2)
        radius = rng.uniform(0.17, 0.23)
        img = np.where((xx - cx) ** 2 + (yy - cy) ** 2 < radius ** 2, FG, BG)
    elif kind == "vband":
        cx = 0.5 + rng.uniform(-0.08, 0.08)
        half_w = rng.uniform(0.10, 0.13)
        img = np.where(np.abs(xx - cx) < half_w, FG, BG)
    elif kind == "hstripes":
        phase = rng.uniform(0.0, 1.0)
        img = np.where(((yy * 2.0 + phase) % 1.0) < 0.5, FG, BG)
    elif kind == "checker":
        ox, oy = rng.uniform(0.0, 1.0, size=2)
        cells = (np.floor(xx * 2.0 + ox) + np.floor(yy * 2.0 + oy)) % 2
        img = np.where(cells > 0.5, FG, BG)
    elif kind == "boxed":
        img, _ = planted_square(seed, size=size, noise=0.0)
        img = img[0].astype(np.float64)
    elif kind == "plain":
        pass
    else:
        raise InputError(f"unknown synthetic class {kind!r}")

    if clutter > 0:
        img = np.where(_clutter_field(rng, yy, xx, clutter), FG, img)
    if texture > 0.0:
        img = img + _texture_field(rng, size, texture)
    if noise > 0.0:
        img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)[None].astype(np.float32)


def planted_square(seed: int, size: int = 128, square_frac: float = 0.35,
                   noise: float = 0.05) -> tuple[np.ndarray, tuple[float, float, float, float]]:
    """Bright square at a seeded position; returns (image, normalized x0,y0,x1,y1)."""
    rng = np.random.default_rng(seed)
    edge = square_frac
    x0 = rng.uniform(0.05, 0.95 - edge)
    y0 = rng.uniform(0.05, 0.95 - edge)
    yy, xx = _grid(size)
    img = np.full((size, size), BG)
    inside = (xx >= x0) & (xx < x0 + edge) & (yy >= y0) & (yy < y0 + edge)
    img = np.where(inside, 0.95, img)
    if noise > 0.0:
        img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)[None].astype(np.float32), (x0, y0, x0 + edge, y0 + edge)


# ---------------------------------------------------------------------------
# Manifests

@dataclass(frozen=True)
class ManifestRecord:
    """One dataset item: an image source, its split, and its label set."""

    source: str                 # "file:relative/path.pgm" or "synthetic:kind?seed=..&size=..&noise=.."
    split: str                  # "train" | "test"
    labels: tuple[str, ...]

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise InputError(f"split must be train or test, got {self.split!r}")
        if not self.labels:
            raise InputError("record has no labels")


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]

    def __post_init__(self):
        splits = {r.split for r in self.records}
        if not {"train", "test"} <= splits:
            raise InputError("manifest needs nonempty train and test splits")

    @property
    def classes(self) -> list[str]:
        return sorted(set().union(*(set(r.labels) for r in self.records)))

    def split(self, which: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == which]

    def save(self, path: str | Path) -> None:
        rows = [{"source": r.source, "split": r.split, "labels": list(r.labels)}
                for r in self.records]
        Path(path).write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        rows = json.loads(Path(path).read_text())
        return cls([ManifestRecord(row["source"], row["split"], tuple(row["labels"]))
                    for row in rows])


def load_image(source: str, base_dir: str | Path = ".") -> np.ndarray:
    """Materialize a manifest source: read the file or run the generator."""
    if source.startswith("synthetic:"):
        parsed = urlparse(source)
        kind = parsed.path
        params = {k: v[0] for k, v in parse_qs(parsed.query).items()}
        return synth_image(kind, seed=int(params.get("seed", 0)),
                           size=int(params.get("size", 128)),
                           noise=float(params.get("noise", 0.0)),
                           texture=float(params.get("texture", 0.0)),
                           clutter=int(params.get("clutter", 0)))
    if source.startswith("file:"):
        return read_pnm(Path(base_dir) / source[len("file:"):])
    return read_pnm(Path(base_dir) / source)


def synthetic_manifest(classes=("blob", "hstripes", "checker"), n_train: int = 100,
                       n_test: int = 100, seed: int = 0, size: int = 128,
                       noise: float = 0.0, texture: float = 0.0,
                       clutter: int = 0) -> DatasetManifest:
    """Single-label synthetic dataset; n_train/n_test count images per class."""
    records = []
    uid = 0
    for split, count in (("train", n_train), ("test", n_test)):
        for cls in classes:
            for _ in range(count):
                img_seed = seed * 1_000_003 + uid
                records.append(ManifestRecord(
                    f"synthetic:{cls}?seed={img_seed}&size={size}"
                    f"&noise={noise}&texture={texture}&clutter={clutter}",
                    split, (cls,),
                ))
                uid += 1
    return DatasetManifest(records)
