"""One-vs-rest linear SVMs over pooled representations.

The per-class problem minimizes (lam/2)||w||^2 + mean hinge loss with a
Pegasos-style 1/(lam*t) step schedule. The default is the full-batch
variant: every update uses the exact mean subgradient, which makes training
deterministic, bit-reproducible across worker counts, and invariant to
duplicating the dataset. A mini-batch size can be set for the classic
stochastic variant with seeded shuffling.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InputError
from .pooling import PooledRepresentation

_MAGIC = b"MPPS"
_VERSION = 1

DEFAULT_EPOCHS = 200
LAMBDA_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


@dataclass
class LinearModel:
    """Per-class weight vectors and biases over one representation strategy."""

    classes: list[str]
    weights: np.ndarray          # (C, D) float64
    biases: np.ndarray           # (C,) float64
    lambda_reg: float
    strategy: str
    epochs: int
    final_objectives: np.ndarray  # (C,) float64

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def save(self, path: str | Path) -> None:
        table = "\n".join(self.classes).encode("utf-8")
        strat = self.strategy.encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIIIdIH", _MAGIC, _VERSION, len(self.classes),
                                 self.dim, self.lambda_reg, self.epochs, len(strat)))
            fh.write(strat)
            fh.write(struct.pack("<I", len(table)))
            fh.write(table)
            fh.write(self.weights.astype("<f4").tobytes())
            fh.write(self.biases.astype("<f4").tobytes())
            fh.write(self.final_objectives.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "LinearModel":
        with open(path, "rb") as fh:
            magic, version, n_cls, dim, lam, epochs, strat_len = struct.unpack(
                "<4sIIIdIH", fh.read(30)
            )
            if magic != _MAGIC:
                raise InputError(f"{path}: not a classifier file (magic {magic!r})")
            if version != _VERSION:
                raise InputError(f"{path}: unsupported classifier version {version}")
            strategy = fh.read(strat_len).decode("utf-8")
            (table_len,) = struct.unpack("<I", fh.read(4))
            classes = fh.read(table_len).decode("utf-8").split("\n")
            weights = np.frombuffer(fh.read(4 * n_cls * dim), dtype="<f4")
            weights = weights.reshape(n_cls, dim).astype(np.float64)
            biases = np.frombuffer(fh.read(4 * n_cls), dtype="<f4").astype(np.float64)
            objectives = np.frombuffer(fh.read(8 * n_cls), dtype="<f8").astype(np.float64)
        return cls(classes, weights, biases, lam, strategy, epochs, objectives)


def hinge_objective(x_aug: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float) -> float:
    margins = 1.0 - y * (x_aug @ w)
    return 0.5 * lam * float(w @ w) + float(np.maximum(margins, 0.0).mean())


def pegasos(x: np.ndarray, y: np.ndarray, lam: float, epochs: int = DEFAULT_EPOCHS,
            seed: int = 0, batch_size: int | None = None,
            project: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Train one binary hinge classifier; returns (augmented weights, objectives).

    x is (n, D); a constant 1 feature is appended internally so the bias
    rides along in the weight vector (and inside the regularizer). y is +-1.
    batch_size None means full-batch updates. The returned weights are the
    running average of the iterates, which damps the limit-cycle oscillation
    of the raw 1/(lam*t) schedule; the recorded per-epoch objective is the
    averaged iterate's.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    x_aug = np.concatenate([x, np.ones((n, 1))], axis=1)
    w = np.zeros(x_aug.shape[1])
    w_sum = np.zeros_like(w)
    rng = np.random.default_rng(seed)
    radius = 1.0 / np.sqrt(lam)

    t = 0
    objectives = np.empty(epochs)
    for epoch in range(epochs):
        if batch_size is None:
            batches = [slice(0, n)]
        else:
            order = rng.permutation(n)
            batches = [order[i: i + batch_size] for i in range(0, n, batch_size)]
        for batch in batches:
            t += 1
            eta = 1.0 / (lam * t)
            xb, yb = x_aug[batch], y[batch]
            active = yb * (xb @ w) < 1.0
            grad_data = (yb[active, None] * xb[active]).sum(axis=0) / len(yb)
            w = (1.0 - eta * lam) * w + eta * grad_data
            if project:
                norm = np.linalg.norm(w)
                if norm > radius:
                    w *= radius / norm
            w_sum += w
        objectives[epoch] = hinge_objective(x_aug, y, w_sum / t, lam)
    return w_sum / t, objectives


def _as_matrix(reps) -> tuple[np.ndarray, str]:
    if isinstance(reps, np.ndarray):
        return np.asarray(reps, dtype=np.float64), "raw"
    reps = list(reps)
    if not reps:
        raise InputError("no training representations")
    if not all(isinstance(r, PooledRepresentation) for r in reps):
        raise InputError("expected PooledRepresentations or a plain matrix")
    strategies = {r.strategy for r in reps}
    if len(strategies) != 1:
        raise InputError(f"mixed pooling strategies in one training set: {sorted(strategies)}")
    lengths = {r.length for r in reps}
    if len(lengths) != 1:
        raise InputError(f"representations have mixed lengths: {sorted(lengths)}")
    return np.stack([r.vector for r in reps]), strategies.pop()


def _label_sets(labels) -> list[frozenset]:
    out = []
    for item in labels:
        if isinstance(item, str):
            out.append(frozenset((item,)))
        else:
            out.append(frozenset(item))
    return out


def train_ovr(reps, labels, lambda_reg: float | None = None, seed: int = 0,
              epochs: int = DEFAULT_EPOCHS, batch_size: int | None = None,
              workers: int = 1) -> LinearModel:
    """Fit one binary classifier per class; classes come from the label sets.

    lambda_reg None selects the constant by 3-fold cross-validated top-1
    accuracy over a small log grid. Per-class fits are independent, so they
    may run on separate threads without affecting the result.
    """
    x, strategy = _as_matrix(reps)
    y_sets = _label_sets(labels)
    if len(y_sets) != x.shape[0]:
        raise InputError("label count does not match representation count")
    classes = sorted(set().union(*y_sets))
    if len(classes) < 2:
        raise ConfigurationError("one-vs-rest needs at least 2 classes")

    if lambda_reg is None:
        lambda_reg = select_lambda(x, y_sets, classes, seed=seed, epochs=epochs,
                                   batch_size=batch_size)

    def fit_one(cls_name: str):
        y = np.array([1.0 if cls_name in s else -1.0 for s in y_sets])
        return pegasos(x, y, lambda_reg, epochs=epochs, seed=seed,
                       batch_size=batch_size)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fit_one, classes))
    else:
        results = [fit_one(c) for c in classes]

    weights = np.stack([w[:-1] for w, _ in results])
    biases = np.array([w[-1] for w, _ in results])
    finals = np.array([obj[-1] for _, obj in results])
    return LinearModel(classes, weights, biases, lambda_reg, strategy,
                       epochs, finals)


def _vector(x) -> np.ndarray:
    if isinstance(x, PooledRepresentation):
        return x.vector
    return np.asarray(x, dtype=np.float64)


def score(model: LinearModel, x) -> np.ndarray:
    """Per-class raw margins w . x + b, aligned with model.classes."""
    v = _vector(x)
    if v.shape[-1] != model.dim:
        raise InputError(f"representation length {v.shape[-1]} != model dim {model.dim}")
    return model.weights @ v + model.biases


def score_matrix(model: LinearModel, reps) -> np.ndarray:
    x, _ = _as_matrix(reps)
    return x @ model.weights.T + model.biases


def predict(model: LinearModel, x) -> str:
    return model.classes[int(np.argmax(score(model, x)))]


def select_lambda(x: np.ndarray, y_sets, classes, seed: int = 0,
                  epochs: int = DEFAULT_EPOCHS, batch_size: int | None = None,
                  grid: Sequence[float] = LAMBDA_GRID, folds: int = 3) -> float:
    """3-fold cross-validated top-1 accuracy over a log grid; ties pick smaller."""
    n = x.shape[0]
    if n < folds:
        return float(grid[len(grid) // 2])
    rng = np.random.default_rng(seed)
    fold_of = rng.permutation(n) % folds

    best_lam, best_acc = None, -1.0
    for lam in grid:
        correct = total = 0
        for fold in range(folds):
            train_idx = np.flatnonzero(fold_of != fold)
            val_idx = np.flatnonzero(fold_of == fold)
            train_sets = [y_sets[i] for i in train_idx]
            present = sorted(set().union(*train_sets))
            if len(present) < 2:
                continue
            ws = []
            for cls_name in present:
                y = np.array([1.0 if cls_name in s else -1.0 for s in train_sets])
                w, _ = pegasos(x[train_idx], y, lam, epochs=epochs, seed=seed,
                               batch_size=batch_size)
                ws.append(w)
            w_mat = np.stack(ws)
            scores = np.concatenate([x[val_idx], np.ones((len(val_idx), 1))], axis=1) @ w_mat.T
            picks = scores.argmax(axis=1)
            for row, pick in zip(val_idx, picks):
                total += 1
                correct += int(present[pick] in y_sets[row])
        acc = correct / total if total else 0.0
        if acc > best_acc:
            best_lam, best_acc = lam, acc
    return float(best_lam if best_lam is not None else grid[len(grid) // 2])
