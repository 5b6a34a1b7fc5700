"""Diagonal-covariance Gaussian mixture fitted by EM.

The mixture is the visual vocabulary the Fisher encoder differentiates
against, so it is kept in float64 throughout; descriptors stay float32 and
are promoted on entry.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .descriptors import DescriptorSet
from .errors import InputError, NumericError

_MAGIC = b"MPPG"
_VERSION = 1

WEIGHT_FLOOR = 1e-6
VAR_FLOOR_FACTOR = 1e-8
CONVERGENCE_TOL = 1e-5
MAX_ITER = 200
MIN_SAMPLES_PER_COMPONENT = 10


@dataclass
class GmmModel:
    """Mixture weights, means, and per-dimension standard deviations."""

    weights: np.ndarray  # (K,) float64, sums to 1
    means: np.ndarray    # (K, d) float64
    sigmas: np.ndarray   # (K, d) float64, elementwise std deviations > 0
    log_likelihoods: np.ndarray | None = field(default=None, compare=False)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def validate(self) -> None:
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise NumericError(f"mixture weights sum to {self.weights.sum()!r}, not 1")
        if (self.weights <= 0).any() or (self.sigmas <= 0).any():
            raise NumericError("mixture weights and sigmas must be strictly positive")

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIII", _MAGIC, _VERSION, self.K, self.dim))
            fh.write(self.weights.astype("<f8").tobytes())
            fh.write(self.means.astype("<f8").tobytes())
            fh.write(self.sigmas.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "GmmModel":
        with open(path, "rb") as fh:
            magic, version, k, d = struct.unpack("<4sIII", fh.read(16))
            if magic != _MAGIC:
                raise InputError(f"{path}: not a vocabulary file (magic {magic!r})")
            if version != _VERSION:
                raise InputError(f"{path}: unsupported vocabulary version {version}")
            weights = np.frombuffer(fh.read(8 * k), dtype="<f8").astype(np.float64)
            means = np.frombuffer(fh.read(8 * k * d), dtype="<f8").reshape(k, d).copy()
            sigmas = np.frombuffer(fh.read(8 * k * d), dtype="<f8").reshape(k, d).copy()
        return cls(weights, means, sigmas)


def _as_matrix(samples) -> np.ndarray:
    if isinstance(samples, DescriptorSet):
        samples = samples.vectors
    return np.asarray(samples, dtype=np.float64)


def _log_densities(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """log( omega_k * N(x; mu_k, diag sigma_k^2) ) for all rows of x: (n, K)."""
    var = model.sigmas ** 2
    const = -0.5 * (model.dim * np.log(2.0 * np.pi) + np.log(var).sum(axis=1))
    # (x - mu)^2 / var expanded so everything is one matmul per moment.
    x2 = x ** 2
    quad = (x2 @ (1.0 / var).T - 2.0 * (x @ (model.means / var).T)
            + (model.means ** 2 / var).sum(axis=1))
    return np.log(model.weights) + const - 0.5 * quad


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    peak = a.max(axis=axis, keepdims=True)
    return (peak + np.log(np.exp(a - peak).sum(axis=axis, keepdims=True))).squeeze(axis)


def responsibilities(model: GmmModel, x) -> np.ndarray:
    """Posterior matrix gamma (n, K); rows sum to 1. Log-sum-exp guarded."""
    x = np.atleast_2d(_as_matrix(x))
    if x.shape[1] != model.dim:
        raise InputError(f"descriptor dim {x.shape[1]} != model dim {model.dim}")
    logp = _log_densities(model, x)
    return np.exp(logp - _logsumexp(logp, axis=1)[:, None])


def posteriors(model: GmmModel, x) -> np.ndarray:
    """Soft-assignment row gamma_k for a single descriptor."""
    return responsibilities(model, np.atleast_2d(np.asarray(x, dtype=np.float64)))[0]


def mean_log_likelihood(model: GmmModel, x) -> float:
    x = np.atleast_2d(_as_matrix(x))
    return float(_logsumexp(_log_densities(model, x), axis=1).mean())


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i] = x[rng.integers(n)]
            continue
        idx = min(np.searchsorted(np.cumsum(d2 / total), rng.random()), n - 1)
        centers[i] = x[idx]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1))
    return centers


def _kmeans(x: np.ndarray, centers: np.ndarray, iters: int,
            rng: np.random.Generator) -> np.ndarray:
    x2 = (x ** 2).sum(axis=1)[:, None]
    for _ in range(iters):
        d2 = x2 - 2.0 * x @ centers.T + (centers ** 2).sum(axis=1)
        assign = d2.argmin(axis=1)
        for k in range(centers.shape[0]):
            members = assign == k
            if members.any():
                centers[k] = x[members].mean(axis=0)
            else:
                centers[k] = x[rng.integers(x.shape[0])]
    return centers


def fit_gmm(samples, k: int, seed: int = 0, *, max_iter: int = MAX_ITER,
            tol: float = CONVERGENCE_TOL, kmeans_iters: int = 10,
            weight_floor: float = WEIGHT_FLOOR,
            var_floor_factor: float = VAR_FLOOR_FACTOR,
            min_samples_factor: int = MIN_SAMPLES_PER_COMPONENT) -> GmmModel:
    """EM fit with k-means++ seeding; deterministic for a fixed seed.

    Components whose posterior mass collapses are re-seeded from the sample
    farthest from its nearest mean. The returned model carries the
    per-iteration mean log-likelihood trajectory.
    """
    x = _as_matrix(samples)
    n, d = x.shape
    if n < min_samples_factor * k:
        raise InputError(f"need at least {min_samples_factor * k} samples to fit {k} components")

    rng = np.random.default_rng(seed)
    var_floor = var_floor_factor * float(x.var(axis=0).mean())
    var_floor = max(var_floor, 1e-300)

    means = _kmeans(x, _kmeans_pp_init(x, k, rng), kmeans_iters, rng)
    global_var = np.maximum(x.var(axis=0), var_floor)
    sigmas = np.tile(np.sqrt(global_var), (k, 1))
    weights = np.full(k, 1.0 / k)
    model = GmmModel(weights, means, sigmas)

    history: list[float] = []
    reseeds = 0
    for _ in range(max_iter):
        logp = _log_densities(model, x)
        lse = _logsumexp(logp, axis=1)
        history.append(float(lse.mean()))
        gamma = np.exp(logp - lse[:, None])

        nk = gamma.sum(axis=0)
        dead = nk < weight_floor * n
        if dead.any():
            reseeds += int(dead.sum())
            if reseeds > 2 * k:
                raise NumericError(
                    f"{reseeds} component re-seeds without recovery; data cannot support K={k}"
                )
            # Re-seed each dead component at the sample farthest from the
            # current means, then redo the E-step.
            d2 = (x ** 2).sum(axis=1)[:, None] - 2.0 * x @ model.means.T \
                + (model.means ** 2).sum(axis=1)
            nearest = d2.min(axis=1)
            for idx in np.flatnonzero(dead):
                far = int(nearest.argmax())
                model.means[idx] = x[far]
                model.sigmas[idx] = np.sqrt(global_var)
                nearest[far] = -np.inf
            model.weights = np.full(k, 1.0 / k)
            continue

        weights = np.maximum(nk / n, weight_floor)
        weights /= weights.sum()
        means = (gamma.T @ x) / nk[:, None]
        second = (gamma.T @ (x ** 2)) / nk[:, None]
        variances = np.maximum(second - means ** 2, var_floor)
        model = GmmModel(weights, means, np.sqrt(variances))

        if len(history) >= 2:
            prev, cur = history[-2], history[-1]
            if cur - prev < tol * abs(prev):
                break

    model.log_likelihoods = np.asarray(history)
    model.validate()
    return model
