"""Weakly-supervised per-class confidence maps.

Each local descriptor is encoded on its own, scored by the classifier that
was trained on whole-image representations, and its score is splatted over
the grid cells its source patch covers. No box supervision is involved:
the signal is purely how much each patch pushes the class margin.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .descriptors import DescriptorSet
from .errors import InputError
from .fisher import encode_fv, l2_normalize, power_normalize
from .gmm import GmmModel
from .pooling import MPP, PooledRepresentation
from .svm import LinearModel, score as svm_score


@dataclass
class ConfidenceMap:
    """Accumulated per-cell scores; cells no patch covered stay no-data."""

    class_label: str
    scores: np.ndarray  # (H, W) float64, mean contribution per cell
    counts: np.ndarray  # (H, W) int64, contributing patches per cell

    @property
    def valid(self) -> np.ndarray:
        return self.counts > 0

    def argmax_cell(self) -> tuple[int, int]:
        """(row, col) of the highest-scoring valid cell."""
        masked = np.where(self.valid, self.scores, -np.inf)
        flat = int(masked.argmax())
        return flat // self.scores.shape[1], flat % self.scores.shape[1]


def patch_representation(model: GmmModel, descriptor: np.ndarray) -> PooledRepresentation:
    """Final representation of a single activation vector (one scale, one patch)."""
    descriptor = np.asarray(descriptor, dtype=np.float64).ravel()
    fv = l2_normalize(power_normalize(l2_normalize(encode_fv(model, descriptor[None, :]))))
    return PooledRepresentation(MPP, fv.vector, 1, (1,), k=model.K, d=model.dim,
                                zero_blocks=("all",) if fv.zero_norm else ())


def build_map(dset: DescriptorSet, gmm_model: GmmModel, classifier: LinearModel,
              class_label: str, grid: tuple[int, int] = (8, 8)) -> ConfidenceMap:
    """Score every patch for one class and splat over its receptive field.

    The patch geometry carried by the descriptors defines the covered cells;
    a cell's value is the mean of all patch scores covering it. Descriptors
    from every scale contribute.
    """
    gh, gw = grid
    if gh < 1 or gw < 1:
        raise InputError(f"grid must be at least 1x1, got {grid}")
    if class_label not in classifier.classes:
        raise InputError(f"classifier has no class {class_label!r}")
    cls_idx = classifier.classes.index(class_label)

    sums = np.zeros((gh, gw))
    counts = np.zeros((gh, gw), dtype=np.int64)
    for i in range(len(dset)):
        rep = patch_representation(gmm_model, dset.vectors[i])
        value = float(svm_score(classifier, rep)[cls_idx])
        cx, cy = float(dset.centers[i, 0]), float(dset.centers[i, 1])
        half = float(dset.edges[i]) / 2.0
        x0, x1 = max(cx - half, 0.0), min(cx + half, 1.0)
        y0, y1 = max(cy - half, 0.0), min(cy + half, 1.0)
        c0, c1 = int(np.floor(x0 * gw)), int(np.ceil(x1 * gw)) - 1
        r0, r1 = int(np.floor(y0 * gh)), int(np.ceil(y1 * gh)) - 1
        c0, c1 = max(c0, 0), min(c1, gw - 1)
        r0, r1 = max(r0, 0), min(r1, gh - 1)
        sums[r0: r1 + 1, c0: c1 + 1] += value
        counts[r0: r1 + 1, c0: c1 + 1] += 1

    scores = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return ConfidenceMap(class_label, scores, counts)


def export_map(cmap: ConfidenceMap, path: str | Path) -> Path:
    """Write an 8-bit binary PGM, min-max normalized over valid cells.

    No-data cells render as 0 and are listed (row col per line) in a
    `<path>.nodata` sidecar. A constant map renders as all 255.
    """
    path = Path(path)
    valid = cmap.valid
    pixels = np.zeros(cmap.scores.shape, dtype=np.uint8)
    if valid.any():
        lo = cmap.scores[valid].min()
        hi = cmap.scores[valid].max()
        if hi > lo:
            norm = (cmap.scores - lo) / (hi - lo)
        else:
            norm = np.ones_like(cmap.scores)
        pixels[valid] = np.rint(norm[valid] * 255.0).astype(np.uint8)

    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())

    sidecar = path.with_name(path.name + ".nodata")
    rows, cols = np.nonzero(~valid)
    sidecar.write_text("".join(f"{r} {c}\n" for r, c in zip(rows, cols)))
    return path
