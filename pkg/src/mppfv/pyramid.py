"""Scale pyramid construction and multi-scale dense extraction.

Each pyramid level doubles the pixel count of the previous one: edge
lengths grow by sqrt(2) per scale (ceil-rounded), so seven scales span an
8x edge range. A `growth="edge"` option doubles edges instead for callers
who want the steeper ladder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .convnet import MacCounter, NetworkSpec, dense_activations
from .descriptors import DescriptorSet
from .errors import InputError

AREA, EDGE = "area", "edge"


def scale_edge(standard: int, scale: int, growth: str = AREA) -> int:
    """Edge length of pyramid level `scale` (1-based)."""
    if scale < 1:
        raise InputError("scale index is 1-based")
    if growth == EDGE:
        return standard * 2 ** (scale - 1)
    if growth != AREA:
        raise InputError(f"unknown growth mode {growth!r}")
    k, odd = divmod(scale - 1, 2)
    n = standard * 2 ** k
    if not odd:
        return n
    # ceil(n * sqrt(2)) computed exactly: sqrt(2 n^2) is irrational for n >= 1.
    return math.isqrt(2 * n * n) + 1


@dataclass(frozen=True)
class ScalePyramid:
    """Geometry of an N-level pyramid over a fixed standard size."""

    standard: int
    num_scales: int
    growth: str = AREA
    resampling: str = "bilinear"

    def __post_init__(self):
        if self.num_scales < 1:
            raise InputError("a pyramid needs at least one scale")

    @property
    def edges(self) -> tuple[int, ...]:
        return tuple(scale_edge(self.standard, s, self.growth) for s in
                     range(1, self.num_scales + 1))


def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Rows of triangle-kernel weights with half-pixel centers, each summing to 1.

    When minifying, the kernel widens by the scale factor so that the
    output is an area average rather than a 2-tap point sample.
    """
    centers = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    width = max(1.0, n_in / n_out)
    lo = np.floor(centers - width).astype(np.int64)
    hi = np.ceil(centers + width).astype(np.int64)
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for j in range(n_out):
        taps = np.arange(lo[j], hi[j] + 1)
        weights = np.maximum(0.0, 1.0 - np.abs(taps - centers[j]) / width)
        taps = np.clip(taps, 0, n_in - 1)  # replicate edges
        np.add.at(mat[j], taps, weights)
        mat[j] /= mat[j].sum()
    return mat


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resample of a (C, H, W) tensor to (C, out_h, out_w)."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3:
        raise InputError(f"image must be (C, H, W), got shape {image.shape}")
    c, ih, iw = image.shape
    if (ih, iw) == (out_h, out_w):
        return np.ascontiguousarray(image)
    rh = _resample_matrix(ih, out_h)
    rw = _resample_matrix(iw, out_w)
    out = np.einsum("oi,cij,pj->cop", rh, image.astype(np.float64), rw)
    return np.ascontiguousarray(out, dtype=np.float32)


def build_pyramid(image: np.ndarray, num_scales: int, standard: int,
                  growth: str = AREA) -> list[np.ndarray]:
    """All N levels as square tensors; level s has edge scale_edge(standard, s)."""
    pyr = ScalePyramid(standard, num_scales, growth)
    return [resize_bilinear(image, e, e) for e in pyr.edges]


def extract_all(net: NetworkSpec, image: np.ndarray, num_scales: int,
                growth: str = AREA, counter: MacCounter | None = None,
                scales: tuple[int, ...] | None = None) -> DescriptorSet:
    """Dense descriptors over the whole pyramid, tagged per scale.

    Levels are processed one at a time so the largest scale never coexists
    with the others in memory. Entry order is (scale, row-major position).
    `scales` restricts extraction to a subset of levels (tags keep their
    pyramid indices, so a mask of (1, 3) yields entries tagged 1 and 3).
    """
    pyr = ScalePyramid(net.standard_size, num_scales, growth)
    wanted = range(1, num_scales + 1) if scales is None else sorted(set(scales))
    parts = []
    for s in wanted:
        if not 1 <= s <= num_scales:
            raise InputError(f"scale {s} outside pyramid 1..{num_scales}")
        edge = pyr.edges[s - 1]
        level = resize_bilinear(image, edge, edge)
        parts.append(dense_activations(net, level, s, num_scales=num_scales,
                                       counter=counter))
    return DescriptorSet.concat(parts, num_scales)
