"""Linear dimension reduction fitted on sampled descriptors.

Fitting goes through the covariance matrix and a symmetric
eigendecomposition; descriptor dimensions stay small enough (<= a few
thousand) that this is cheaper and more predictable than an SVD of the
full sample matrix.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .descriptors import DescriptorSet
from .errors import InputError

_MAGIC = b"MPPP"
_VERSION = 1

DESK_SAMPLE_LIMIT = 25_600


@dataclass
class PcaModel:
    """Mean vector plus orthonormal projection rows, strongest direction first."""

    mean: np.ndarray                # (d_in,) float64
    components: np.ndarray          # (d_out, d_in) float64, orthonormal rows
    explained_variance: np.ndarray  # (d_out,) float64, eigenvalues
    whiten: bool = False

    @property
    def d_in(self) -> int:
        return self.components.shape[1]

    @property
    def d_out(self) -> int:
        return self.components.shape[0]

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIIIB", _MAGIC, _VERSION, self.d_in, self.d_out,
                                 int(self.whiten)))
            fh.write(self.mean.astype("<f4").tobytes())
            fh.write(self.components.astype("<f4").tobytes())
            fh.write(self.explained_variance.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "PcaModel":
        with open(path, "rb") as fh:
            magic, version, d_in, d_out, whiten = struct.unpack("<4sIIIB", fh.read(17))
            if magic != _MAGIC:
                raise InputError(f"{path}: not a projection model (magic {magic!r})")
            if version != _VERSION:
                raise InputError(f"{path}: unsupported model version {version}")
            mean = np.frombuffer(fh.read(4 * d_in), dtype="<f4").astype(np.float64)
            comps = np.frombuffer(fh.read(4 * d_in * d_out), dtype="<f4")
            comps = comps.reshape(d_out, d_in).astype(np.float64)
            ev = np.frombuffer(fh.read(4 * d_out), dtype="<f4").astype(np.float64)
        return cls(mean, comps, ev, whiten=bool(whiten))


def subsample(vectors: np.ndarray, limit: int, seed: int) -> np.ndarray:
    """Uniform sample without replacement, seeded; identity when small enough."""
    if len(vectors) <= limit:
        return vectors
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(vectors), size=limit, replace=False)
    idx.sort()
    return vectors[idx]


def _as_matrix(samples) -> np.ndarray:
    if isinstance(samples, DescriptorSet):
        return samples.vectors
    return np.asarray(samples)


def fit_pca(samples, d_out: int, whiten: bool = False) -> PcaModel:
    """Top-d_out principal directions of the sample covariance.

    Signs are fixed deterministically (largest-magnitude entry of each row
    positive). If the samples have rank < d_out the remaining rows are an
    orthonormal completion and a warning is emitted.
    """
    x = _as_matrix(samples).astype(np.float64)
    n, d_in = x.shape
    if d_out > d_in:
        raise InputError(f"cannot project {d_in}-D data to {d_out} dimensions")
    if n < d_out:
        raise InputError(f"need at least {d_out} samples, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:d_out]
    values = np.maximum(eigvals[order], 0.0)
    rows = eigvecs[:, order].T.copy()

    rank_tol = max(eigvals.max(), 0.0) * d_in * np.finfo(np.float64).eps
    rank = int((eigvals > rank_tol).sum())
    if rank < d_out:
        # eigh already returns an orthonormal completion for the null space.
        warnings.warn(
            f"sample rank {rank} < requested {d_out} dimensions; "
            "trailing directions are an arbitrary orthonormal completion",
            stacklevel=2,
        )

    flip = np.take_along_axis(rows, np.abs(rows).argmax(axis=1, keepdims=True), 1) < 0
    rows[flip.ravel()] *= -1.0
    return PcaModel(mean, rows, values, whiten=whiten)


def project(model: PcaModel, data):
    """Center and project; DescriptorSet geometry tags pass through unchanged."""
    x = _as_matrix(data)
    if x.shape[1] != model.d_in:
        raise InputError(f"model expects {model.d_in}-D input, got {x.shape[1]}-D")
    out = (x.astype(np.float64) - model.mean) @ model.components.T
    if model.whiten:
        out = out / np.sqrt(np.maximum(model.explained_variance, 1e-12))
    if isinstance(data, DescriptorSet):
        return data.with_vectors(out.astype(np.float32))
    return out
