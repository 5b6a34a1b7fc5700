"""Pure-numpy fallbacks for the compiled kernels.

conv2d uses im2col + a float64 matmul so that it agrees with the compiled
path (which also accumulates in float64) to the last float32 bit in all but
half-ulp ties.
"""

from __future__ import annotations

import numpy as np


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int) -> np.ndarray:
    ic, ih, iw = x.shape
    oc, _, kh, kw = w.shape
    oh = (ih + 2 * pad - kh) // stride + 1
    ow = (iw + 2 * pad - kw) // stride + 1
    if pad > 0:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    # im2col: (ic*kh*kw, oh*ow) column matrix gathered with stride tricks.
    s = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(ic, kh, kw, oh, ow),
        strides=(s[0], s[1], s[2], s[1] * stride, s[2] * stride),
        writeable=False,
    )
    cols = windows.reshape(ic * kh * kw, oh * ow).astype(np.float64)
    out = w.reshape(oc, ic * kh * kw).astype(np.float64) @ cols
    out += b.astype(np.float64)[:, None]
    return out.reshape(oc, oh, ow).astype(np.float32)


def maxpool2d(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    ic, ih, iw = x.shape
    oh = (ih - kernel) // stride + 1
    ow = (iw - kernel) // stride + 1
    s = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(ic, oh, ow, kernel, kernel),
        strides=(s[0], s[1] * stride, s[2] * stride, s[1], s[2]),
        writeable=False,
    )
    return np.ascontiguousarray(windows.max(axis=(3, 4)), dtype=np.float32)
