"""Backend selection for the hot inner loops.

The compiled extension (mppfv._core) is used when it imported cleanly;
otherwise the numpy implementations take over. Set MPPFV_PURE_PYTHON=1 to
force the fallback, e.g. to run the backend-comparison benchmark.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_np
from .errors import InputError

if os.environ.get("MPPFV_PURE_PYTHON", "0") not in ("", "0"):
    _impl = _kernels_np
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_np

BACKEND = "compiled" if _impl is not _kernels_np else "numpy"


def _as_f32(a: np.ndarray, ndim: int, name: str) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float32)
    if a.ndim != ndim:
        raise InputError(f"{name} must be {ndim}-D, got shape {a.shape}")
    return a


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
           stride: int = 1, pad: int = 0) -> np.ndarray:
    """Convolve a (C, H, W) float32 tensor with (OC, C, KH, KW) filters."""
    x = _as_f32(x, 3, "input")
    weight = _as_f32(weight, 4, "weight")
    bias = _as_f32(bias, 1, "bias")
    if weight.shape[1] != x.shape[0]:
        raise InputError(
            f"filter expects {weight.shape[1]} input channels, tensor has {x.shape[0]}"
        )
    if bias.shape[0] != weight.shape[0]:
        raise InputError("bias length must equal filter count")
    if stride < 1 or pad < 0:
        raise InputError("stride must be >= 1 and pad >= 0")
    if x.shape[1] + 2 * pad < weight.shape[2] or x.shape[2] + 2 * pad < weight.shape[3]:
        raise InputError(
            f"input {x.shape[1]}x{x.shape[2]} smaller than kernel "
            f"{weight.shape[2]}x{weight.shape[3]} (pad {pad})"
        )
    return _impl.conv2d(x, weight, bias, stride, pad)


def maxpool2d(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Max pool a (C, H, W) float32 tensor; windows never pad."""
    x = _as_f32(x, 3, "input")
    if kernel < 1 or stride < 1:
        raise InputError("kernel and stride must be >= 1")
    if x.shape[1] < kernel or x.shape[2] < kernel:
        raise InputError(f"input {x.shape[1]}x{x.shape[2]} smaller than pool window {kernel}")
    return _impl.maxpool2d(x, kernel, stride)
