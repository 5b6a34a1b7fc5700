"""Independent reference implementations the tests check the package against.

Everything here is written from the definitions: direct loops, direct
density evaluation, finite differences, exhaustive enumeration. None of it
calls into the code paths it is used to verify.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------------------
# Convolution: direct triple loop over output positions

def naive_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                 stride: int, pad: int) -> np.ndarray:
    ic, ih, iw = x.shape
    oc, _, kh, kw = w.shape
    if pad > 0:
        padded = np.zeros((ic, ih + 2 * pad, iw + 2 * pad), dtype=np.float64)
        padded[:, pad: pad + ih, pad: pad + iw] = x
    else:
        padded = x.astype(np.float64)
    oh = (ih + 2 * pad - kh) // stride + 1
    ow = (iw + 2 * pad - kw) // stride + 1
    out = np.zeros((oc, oh, ow), dtype=np.float64)
    for f in range(oc):
        for i in range(oh):
            for j in range(ow):
                window = padded[:, i * stride: i * stride + kh, j * stride: j * stride + kw]
                out[f, i, j] = float(np.sum(window * w[f].astype(np.float64))) + float(b[f])
    return out


def naive_maxpool2d(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    ic, ih, iw = x.shape
    oh = (ih - kernel) // stride + 1
    ow = (iw - kernel) // stride + 1
    out = np.zeros((ic, oh, ow), dtype=np.float64)
    for c in range(ic):
        for i in range(oh):
            for j in range(ow):
                out[c, i, j] = x[c, i * stride: i * stride + kernel,
                                 j * stride: j * stride + kernel].max()
    return out


def naive_forward(layers, x: np.ndarray, upto: int) -> np.ndarray:
    """Forward through mppfv LayerSpecs using only the naive kernels above."""
    out = x.astype(np.float64)
    for layer in layers[: upto + 1]:
        if layer.kind == "conv":
            out = naive_conv2d(out, layer.weight, layer.bias, layer.stride, layer.pad)
        elif layer.kind == "relu":
            out = np.maximum(out, 0.0)
        elif layer.kind == "maxpool":
            out = naive_maxpool2d(out, layer.kernel_h, layer.stride)
        elif layer.kind == "fc":
            flat = out.reshape(-1)
            out = (layer.weight.astype(np.float64) @ flat
                   + layer.bias.astype(np.float64)).reshape(layer.out_channels, 1, 1)
        else:
            raise AssertionError(f"oracle does not model layer kind {layer.kind}")
    return out


# ---------------------------------------------------------------------------
# Gaussian mixture: direct density evaluation (no log-domain tricks)

def gaussian_pdf(x: np.ndarray, mean: np.ndarray, sigma: np.ndarray) -> float:
    z = (x - mean) / sigma
    norm = np.prod(1.0 / (math.sqrt(2.0 * math.pi) * sigma))
    return float(norm * math.exp(-0.5 * float(np.dot(z, z))))


def direct_posteriors(weights, means, sigmas, x) -> np.ndarray:
    dens = np.array([w * gaussian_pdf(x, m, s)
                     for w, m, s in zip(weights, means, sigmas)])
    return dens / dens.sum()


def mixture_log_likelihood(weights, means, sigmas, xs) -> float:
    total = 0.0
    for x in xs:
        total += math.log(sum(w * gaussian_pdf(x, m, s)
                              for w, m, s in zip(weights, means, sigmas)))
    return total / len(xs)


def fisher_vector_fd(weights, means, sigmas, xs, h: float = 1e-5):
    """Fisher vector via central finite differences of the mean log-likelihood.

    The gradient w.r.t. mu_k[j] is scaled by sigma_k[j]/sqrt(w_k) and the
    gradient w.r.t. sigma_k[j] by sigma_k[j]/sqrt(2 w_k) (the diagonal
    inverse-square-root Fisher information of the mixture).
    """
    k, d = means.shape
    mean_grad = np.zeros((k, d))
    sigma_grad = np.zeros((k, d))
    for ki in range(k):
        for j in range(d):
            mp, mm = means.copy(), means.copy()
            mp[ki, j] += h
            mm[ki, j] -= h
            grad = (mixture_log_likelihood(weights, mp, sigmas, xs)
                    - mixture_log_likelihood(weights, mm, sigmas, xs)) / (2 * h)
            mean_grad[ki, j] = grad * sigmas[ki, j] / math.sqrt(weights[ki])

            sp, sm = sigmas.copy(), sigmas.copy()
            sp[ki, j] += h
            sm[ki, j] -= h
            grad = (mixture_log_likelihood(weights, means, sp, xs)
                    - mixture_log_likelihood(weights, means, sm, xs)) / (2 * h)
            sigma_grad[ki, j] = grad * sigmas[ki, j] / math.sqrt(2.0 * weights[ki])
    return mean_grad, sigma_grad


def fisher_vector_direct(weights, means, sigmas, xs):
    """Closed-form Fisher vector from direct posteriors, one descriptor at a time."""
    k, d = means.shape
    n = len(xs)
    mean_grad = np.zeros((k, d))
    sigma_grad = np.zeros((k, d))
    for x in xs:
        gamma = direct_posteriors(weights, means, sigmas, x)
        for ki in range(k):
            z = (x - means[ki]) / sigmas[ki]
            mean_grad[ki] += gamma[ki] * z
            sigma_grad[ki] += gamma[ki] * (z * z - 1.0)
    for ki in range(k):
        mean_grad[ki] /= n * math.sqrt(weights[ki])
        sigma_grad[ki] /= n * math.sqrt(2.0 * weights[ki])
    return mean_grad, sigma_grad


# ---------------------------------------------------------------------------
# 11-point interpolated average precision by exhaustive enumeration

def brute_force_ap11(scores, relevance) -> float:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ranked = [bool(relevance[i]) for i in order]
    total_rel = sum(ranked)
    precisions, recalls = [], []
    hits = 0
    for rank, rel in enumerate(ranked, start=1):
        hits += int(rel)
        precisions.append(hits / rank)
        recalls.append(hits / total_rel)
    ap = 0.0
    for tenths in range(11):
        level = tenths / 10.0
        candidates = [p for p, r in zip(precisions, recalls) if r >= level - 1e-12]
        ap += max(candidates) if candidates else 0.0
    return ap / 11.0


# ---------------------------------------------------------------------------
# Spatial-pyramid routing predicate

def sp_region_of(center_y: float) -> str:
    if center_y < 1.0 / 3.0:
        return "top"
    if center_y < 2.0 / 3.0:
        return "middle"
    return "bottom"
