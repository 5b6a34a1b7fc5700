"""Descriptor containers: local activation vectors tagged with patch geometry.

A DescriptorSet is the interchange point of the pipeline: dense extraction
produces one, PCA projects one, the encoders consume one. Entries keep a
deterministic (scale, row-major position) order so containers written twice
are byte-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import InputError

_MAGIC = b"MPPD"
_VERSION = 1


class PatchGeometry(NamedTuple):
    """Source-patch record for one descriptor, in normalized image coordinates."""

    scale: int
    center_x: float
    center_y: float
    edge: float


@dataclass
class DescriptorSet:
    """A bag of d-dimensional local descriptors tagged with scale and geometry.

    vectors : (n, d) float32
    scales  : (n,) int32, 1-based scale index
    centers : (n, 2) float32, normalized (x, y) patch centers in [0, 1]
    edges   : (n,) float32, normalized patch edge length in (0, 1]
    num_scales : declared number of pyramid scales N
    """

    vectors: np.ndarray
    scales: np.ndarray
    centers: np.ndarray
    edges: np.ndarray
    num_scales: int

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.int32)
        self.centers = np.ascontiguousarray(self.centers, dtype=np.float32)
        self.edges = np.ascontiguousarray(self.edges, dtype=np.float32)
        n = len(self.vectors)
        if self.vectors.ndim != 2:
            raise InputError(f"vectors must be (n, d), got shape {self.vectors.shape}")
        if self.scales.shape != (n,) or self.centers.shape != (n, 2) or self.edges.shape != (n,):
            raise InputError("geometry arrays do not match descriptor count")
        if n and (self.scales.min() < 1 or self.scales.max() > self.num_scales):
            raise InputError(
                f"scale tags must lie in [1, {self.num_scales}], "
                f"got range [{self.scales.min()}, {self.scales.max()}]"
            )

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def scale_counts(self) -> np.ndarray:
        """Per-scale entry counts |x_s|, indexed s-1, summing to len(self)."""
        return np.bincount(self.scales, minlength=self.num_scales + 1)[1:].astype(np.int64)

    def geometry(self, i: int) -> PatchGeometry:
        return PatchGeometry(
            int(self.scales[i]),
            float(self.centers[i, 0]),
            float(self.centers[i, 1]),
            float(self.edges[i]),
        )

    def subset(self, mask: np.ndarray) -> "DescriptorSet":
        mask = np.asarray(mask)
        return DescriptorSet(
            self.vectors[mask], self.scales[mask], self.centers[mask],
            self.edges[mask], self.num_scales,
        )

    def for_scale(self, scale: int) -> "DescriptorSet":
        return self.subset(self.scales == scale)

    def with_vectors(self, vectors: np.ndarray) -> "DescriptorSet":
        """Same geometry tags, new vectors (e.g. after projection)."""
        if len(vectors) != len(self):
            raise InputError("replacement vectors must match entry count")
        return DescriptorSet(vectors, self.scales, self.centers, self.edges, self.num_scales)

    @classmethod
    def concat(cls, parts: Iterable["DescriptorSet"], num_scales: int) -> "DescriptorSet":
        parts = list(parts)
        if not parts:
            raise InputError("cannot concatenate zero descriptor sets")
        return cls(
            np.concatenate([p.vectors for p in parts]),
            np.concatenate([p.scales for p in parts]),
            np.concatenate([p.centers for p in parts]),
            np.concatenate([p.edges for p in parts]),
            num_scales,
        )

    def save(self, path: str | Path) -> None:
        counts = self.scale_counts()
        header = struct.pack(
            "<4sIIIQ", _MAGIC, _VERSION, self.dim, self.num_scales, len(self)
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(counts.astype("<u8").tobytes())
            fh.write(self.scales.astype("<i4").tobytes())
            fh.write(self.centers.astype("<f4").tobytes())
            fh.write(self.edges.astype("<f4").tobytes())
            fh.write(self.vectors.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "DescriptorSet":
        with open(path, "rb") as fh:
            magic, version, dim, num_scales, n = struct.unpack("<4sIIIQ", fh.read(24))
            if magic != _MAGIC:
                raise InputError(f"{path}: not a descriptor container (magic {magic!r})")
            if version != _VERSION:
                raise InputError(f"{path}: unsupported container version {version}")
            counts = np.frombuffer(fh.read(8 * num_scales), dtype="<u8")
            scales = np.frombuffer(fh.read(4 * n), dtype="<i4")
            centers = np.frombuffer(fh.read(8 * n), dtype="<f4").reshape(n, 2)
            edges = np.frombuffer(fh.read(4 * n), dtype="<f4")
            vectors = np.frombuffer(fh.read(4 * n * dim), dtype="<f4").reshape(n, dim)
        out = cls(vectors, scales, centers, edges, num_scales)
        if not np.array_equal(out.scale_counts(), counts.astype(np.int64)):
            raise InputError(f"{path}: per-scale counts disagree with entries")
        return out
