"""Fisher vector encoding of descriptor sets against a Gaussian-mixture vocabulary.

The encoding is the (Fisher-information normalized) gradient of the mean
log-likelihood with respect to the mixture means and standard deviations:
for component k with weight w_k and n descriptors,

    mean block   (1 / (n sqrt(w_k)))   sum_i gamma_k(x_i) (x_i - mu_k) / sigma_k
    sigma block  (1 / (n sqrt(2 w_k))) sum_i gamma_k(x_i) [((x_i - mu_k) / sigma_k)^2 - 1]

giving 2*K*d numbers per set. The weight-gradient block is deliberately not
part of the representation. Accumulation is float64: tens of thousands of
float32 contributions per dimension lose digits otherwise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .descriptors import DescriptorSet
from .errors import InputError
from .gmm import GmmModel, responsibilities

_MAGIC = b"MPPF"
_VERSION = 1

POWER_ALPHA = 0.5


@dataclass(frozen=True)
class EncodedHeader:
    """Common header of encoded-vector files (raw and pooled share it)."""

    k: int
    d: int
    flags: int     # bit 0 power, bit 1 l2, bit 2 zero-norm
    strategy: int  # 0 = raw Fisher vector; pooled strategies use 1..5
    blocks: int    # csf/spatial block count; 0 otherwise


def write_encoded(path: str | Path, payload: np.ndarray, *, k: int, d: int,
                  flags: int, strategy: int = 0, blocks: int = 0) -> None:
    payload = np.asarray(payload, dtype=np.float64).ravel()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIIBBIQ", _MAGIC, _VERSION, k, d, flags,
                             strategy, blocks, payload.shape[0]))
        fh.write(payload.astype("<f4").tobytes())


def read_encoded(path: str | Path) -> tuple[np.ndarray, EncodedHeader]:
    with open(path, "rb") as fh:
        magic, version, k, d, flags, strategy, blocks, length = struct.unpack(
            "<4sIIIBBIQ", fh.read(30)
        )
        if magic != _MAGIC:
            raise InputError(f"{path}: not an encoded-vector file (magic {magic!r})")
        if version != _VERSION:
            raise InputError(f"{path}: unsupported file version {version}")
        payload = np.frombuffer(fh.read(4 * length), dtype="<f4").astype(np.float64)
    if payload.shape[0] != length:
        raise InputError(f"{path}: truncated payload")
    return payload, EncodedHeader(k, d, flags, strategy, blocks)


@dataclass
class FisherVector:
    """Mean- and sigma-gradient blocks plus normalization state flags."""

    mean_grad: np.ndarray   # (K, d) float64
    sigma_grad: np.ndarray  # (K, d) float64
    power_normalized: bool = False
    l2_normalized: bool = False
    zero_norm: bool = False  # l2 step was a no-op on an all-zero vector

    @property
    def K(self) -> int:
        return self.mean_grad.shape[0]

    @property
    def dim(self) -> int:
        return self.mean_grad.shape[1]

    @property
    def vector(self) -> np.ndarray:
        """Flat 2Kd layout: all mean gradients, then all sigma gradients."""
        return np.concatenate([self.mean_grad.ravel(), self.sigma_grad.ravel()])

    @classmethod
    def from_vector(cls, v: np.ndarray, k: int, d: int, **flags) -> "FisherVector":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (2 * k * d,):
            raise InputError(f"expected a {2 * k * d}-vector, got shape {v.shape}")
        return cls(v[: k * d].reshape(k, d).copy(), v[k * d:].reshape(k, d).copy(), **flags)

    def save(self, path: str | Path) -> None:
        flags = (int(self.power_normalized) | (int(self.l2_normalized) << 1)
                 | (int(self.zero_norm) << 2))
        write_encoded(path, self.vector, k=self.K, d=self.dim, flags=flags)

    @classmethod
    def load(cls, path: str | Path) -> "FisherVector":
        v, header = read_encoded(path)
        if header.strategy != 0:
            raise InputError(f"{path}: holds a pooled representation, not a raw Fisher vector")
        flags = header.flags
        return cls.from_vector(v, header.k, header.d, power_normalized=bool(flags & 1),
                               l2_normalized=bool(flags & 2), zero_norm=bool(flags & 4))


def encode_fv(model: GmmModel, descriptors) -> FisherVector:
    """Unnormalized Fisher vector of a non-empty descriptor subset.

    Contributions are averaged (1/n), so the encoding of a union of subsets
    is the count-weighted average of their encodings.
    """
    if isinstance(descriptors, DescriptorSet):
        x = descriptors.vectors
    else:
        x = descriptors
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    if n == 0:
        raise InputError("cannot encode an empty descriptor subset")
    if x.shape[1] != model.dim:
        raise InputError(f"descriptor dim {x.shape[1]} != vocabulary dim {model.dim}")

    gamma = responsibilities(model, x)          # (n, K)
    s0 = gamma.sum(axis=0)                      # (K,)
    s1 = gamma.T @ x                            # (K, d)
    s2 = gamma.T @ (x ** 2)                     # (K, d)

    mu, sig, w = model.means, model.sigmas, model.weights
    centered = s1 - mu * s0[:, None]
    mean_grad = centered / sig / (n * np.sqrt(w))[:, None]
    quad = (s2 - 2.0 * mu * s1 + (mu ** 2) * s0[:, None]) / (sig ** 2) - s0[:, None]
    sigma_grad = quad / (n * np.sqrt(2.0 * w))[:, None]
    return FisherVector(mean_grad, sigma_grad)


def power_normalize(fv: FisherVector, alpha: float = POWER_ALPHA) -> FisherVector:
    """Signed power z -> sign(z) |z|^alpha, elementwise. Refuses to run twice."""
    if fv.power_normalized:
        raise InputError("Fisher vector is already power-normalized")
    mg = np.sign(fv.mean_grad) * np.abs(fv.mean_grad) ** alpha
    sg = np.sign(fv.sigma_grad) * np.abs(fv.sigma_grad) ** alpha
    return replace(fv, mean_grad=mg, sigma_grad=sg, power_normalized=True)


def l2_normalize(obj):
    """Scale to unit l2 norm; an all-zero input comes back unchanged.

    Accepts a FisherVector (returns one, with flags updated) or a plain
    ndarray (returns an ndarray).
    """
    if isinstance(obj, FisherVector):
        norm = float(np.sqrt((obj.mean_grad ** 2).sum() + (obj.sigma_grad ** 2).sum()))
        if norm == 0.0:
            return replace(obj, l2_normalized=True, zero_norm=True)
        return replace(obj, mean_grad=obj.mean_grad / norm,
                       sigma_grad=obj.sigma_grad / norm, l2_normalized=True)
    v = np.asarray(obj, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    return v if norm == 0.0 else v / norm
