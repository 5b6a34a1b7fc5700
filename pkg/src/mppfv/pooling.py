"""Pooling strategies that merge per-scale descriptors into one representation.

The headline strategy (MPP) l2-normalizes each scale's Fisher vector before
averaging, so every scale contributes with weight exactly 1/N no matter how
many descriptors it produced. The naive alternative (NFK) encodes all scales
in one pass, which weights scale s by its descriptor share |x_s|/|X| -- that
is what lets dense fine scales dominate. CSF concatenates instead of
averaging, AP skips the Fisher layer entirely, and MPP+SP adds a four-region
vertical spatial split.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .descriptors import DescriptorSet
from .errors import InputError
from .fisher import (FisherVector, encode_fv, l2_normalize, power_normalize,
                     read_encoded, write_encoded)
from .gmm import GmmModel

MPP, NFK, CSF, AP, MPP_SP = "mpp", "nfk", "csf", "ap", "mpp-sp"
STRATEGIES = (MPP, NFK, CSF, AP, MPP_SP)
_STRATEGY_TAGS = {MPP: 1, NFK: 2, CSF: 3, AP: 4, MPP_SP: 5}
_TAG_STRATEGIES = {v: k for k, v in _STRATEGY_TAGS.items()}

SP_REGIONS = ("whole", "top", "middle", "bottom")


@dataclass
class PooledRepresentation:
    """Final l2-normalized payload vector plus provenance."""

    strategy: str
    vector: np.ndarray                      # (length,) float64
    num_scales: int
    scale_counts: tuple[int, ...]           # |x_s| for the scales that were pooled
    k: int = 0
    d: int = 0
    zero_blocks: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InputError(f"unknown pooling strategy {self.strategy!r}")
        self.vector = np.asarray(self.vector, dtype=np.float64).ravel()

    @property
    def length(self) -> int:
        return self.vector.shape[0]

    def save(self, path: str | Path) -> None:
        flags = 0b011 | (int(bool(self.zero_blocks)) << 2)  # power+l2 always applied
        write_encoded(path, self.vector, k=self.k, d=self.d, flags=flags,
                      strategy=_STRATEGY_TAGS[self.strategy],
                      blocks=len(self.scale_counts))

    @classmethod
    def load(cls, path: str | Path) -> "PooledRepresentation":
        payload, header = read_encoded(path)
        strategy = _TAG_STRATEGIES.get(header.strategy)
        if strategy is None:
            raise InputError(f"{path}: not a pooled representation")
        return cls(strategy, payload, header.blocks, (), k=header.k, d=header.d)


def _select_scales(dset: DescriptorSet, scales: Sequence[int] | None) -> list[int]:
    if scales is None:
        wanted = list(range(1, dset.num_scales + 1))
    else:
        wanted = sorted(set(int(s) for s in scales))
        for s in wanted:
            if not 1 <= s <= dset.num_scales:
                raise InputError(f"scale {s} outside pyramid 1..{dset.num_scales}")
    return wanted


def _per_scale_sets(dset: DescriptorSet, scales: Sequence[int] | None):
    counts = dset.scale_counts()
    wanted = _select_scales(dset, scales)
    empty = [s for s in wanted if counts[s - 1] == 0]
    if empty:
        raise InputError(f"scales {empty} have no descriptors")
    return [(s, dset.for_scale(s)) for s in wanted]


def _finalize(flat: np.ndarray, k: int, d: int) -> FisherVector:
    fv = FisherVector.from_vector(flat, k, d)
    return l2_normalize(power_normalize(fv))


def pool_mpp(model: GmmModel, dset: DescriptorSet,
             scales: Sequence[int] | None = None) -> PooledRepresentation:
    """Average of per-scale l2-normalized Fisher vectors, then power + l2."""
    per_scale = _per_scale_sets(dset, scales)
    acc = np.zeros(2 * model.K * model.dim)
    counts = []
    for _, sub in per_scale:
        acc += l2_normalize(encode_fv(model, sub)).vector
        counts.append(len(sub))
    acc /= len(per_scale)
    out = _finalize(acc, model.K, model.dim)
    return PooledRepresentation(MPP, out.vector, len(per_scale), tuple(counts),
                                k=model.K, d=model.dim,
                                zero_blocks=("all",) if out.zero_norm else ())


def pool_nfk(model: GmmModel, dset: DescriptorSet,
             scales: Sequence[int] | None = None) -> PooledRepresentation:
    """One Fisher vector over all scales' descriptors, then power + l2."""
    wanted = _select_scales(dset, scales)
    mask = np.isin(dset.scales, wanted)
    if not mask.any():
        raise InputError("no descriptors in the selected scales")
    sub = dset.subset(mask)
    counts = tuple(int(c) for c in sub.scale_counts()[np.asarray(wanted) - 1])
    out = _finalize(encode_fv(model, sub).vector, model.K, model.dim)
    return PooledRepresentation(NFK, out.vector, len(wanted), counts,
                                k=model.K, d=model.dim,
                                zero_blocks=("all",) if out.zero_norm else ())


def pool_csf(model: GmmModel, dset: DescriptorSet,
             scales: Sequence[int] | None = None) -> PooledRepresentation:
    """Per-scale power+l2 Fisher vectors concatenated in scale order, then l2."""
    per_scale = _per_scale_sets(dset, scales)
    blocks = []
    counts = []
    for _, sub in per_scale:
        blocks.append(l2_normalize(power_normalize(encode_fv(model, sub))).vector)
        counts.append(len(sub))
    flat = l2_normalize(np.concatenate(blocks))
    return PooledRepresentation(CSF, flat, len(per_scale), tuple(counts),
                                k=model.K, d=model.dim)


def pool_ap(vectors) -> PooledRepresentation:
    """l2-normalized arithmetic mean of raw activation vectors; no Fisher layer."""
    x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if x.shape[0] == 0:
        raise InputError("cannot average zero activation vectors")
    mean = x.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    zero = norm == 0.0
    return PooledRepresentation(AP, mean if zero else mean / norm, 1, (x.shape[0],),
                                d=x.shape[1], zero_blocks=("all",) if zero else ())


def sp_region_masks(dset: DescriptorSet) -> dict[str, np.ndarray]:
    """Vertical-thirds routing by patch center: whole, top, middle, bottom."""
    cy = dset.centers[:, 1]
    return {
        "whole": np.ones(len(dset), dtype=bool),
        "top": cy < 1.0 / 3.0,
        "middle": (cy >= 1.0 / 3.0) & (cy < 2.0 / 3.0),
        "bottom": cy >= 2.0 / 3.0,
    }


def pool_mpp_sp(model: GmmModel, dset: DescriptorSet,
                scales: Sequence[int] | None = None) -> PooledRepresentation:
    """MPP per spatial region (whole/top/middle/bottom), concatenated, then l2.

    Empty regions keep their slot as a zero block so the length is always
    4 * 2Kd. Within a region only the scales that actually reach it are
    averaged.
    """
    block_len = 2 * model.K * model.dim
    masks = sp_region_masks(dset)
    blocks = []
    zero_blocks = []
    for name in SP_REGIONS:
        sub = dset.subset(masks[name])
        if len(sub) == 0:
            blocks.append(np.zeros(block_len))
            zero_blocks.append(name)
            continue
        present = [s for s in _select_scales(dset, scales)
                   if (sub.scales == s).any()]
        if not present:
            blocks.append(np.zeros(block_len))
            zero_blocks.append(name)
            continue
        blocks.append(pool_mpp(model, sub, scales=present).vector)
    flat = l2_normalize(np.concatenate(blocks))
    wanted = _select_scales(dset, scales)
    counts = tuple(int(c) for c in dset.scale_counts()[np.asarray(wanted) - 1])
    return PooledRepresentation(MPP_SP, flat, len(wanted), counts,
                                k=model.K, d=model.dim, zero_blocks=tuple(zero_blocks))


_POOLERS = {MPP: pool_mpp, NFK: pool_nfk, CSF: pool_csf, MPP_SP: pool_mpp_sp}


def pool(strategy: str, model: GmmModel | None, dset: DescriptorSet,
         scales: Sequence[int] | None = None) -> PooledRepresentation:
    """Dispatch by strategy name; AP pools the raw vectors and needs no vocabulary."""
    if strategy == AP:
        wanted = _select_scales(dset, scales)
        mask = np.isin(dset.scales, wanted)
        return pool_ap(dset.vectors[mask])
    if strategy not in _POOLERS:
        raise InputError(f"unknown pooling strategy {strategy!r}")
    if model is None:
        raise InputError(f"strategy {strategy} needs a fitted vocabulary")
    return _POOLERS[strategy](model, dset, scales=scales)
