# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the dense forward pass.

Accumulation is float64 even though tensors are carried as float32: the
fallback path sums in float64 too, so both backends round to the same
float32 outputs except in rare half-ulp ties.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d(const float[:, :, ::1] x, const float[:, :, :, ::1] w,
           const float[::1] b, int stride, int pad):
    """Valid/zero-padded 2-D convolution (cross-correlation) of a CHW tensor."""
    cdef Py_ssize_t ic = x.shape[0], ih = x.shape[1], iw = x.shape[2]
    cdef Py_ssize_t oc = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = (ih + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (iw + 2 * pad - kw) // stride + 1
    out_arr = np.empty((oc, oh, ow), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t f, i, j, c, u, v, y0, x0, y, xx, u0, u1, v0, v1
    cdef double acc
    with nogil:
        for i in range(oh):
            y0 = i * stride - pad
            # Clip the kernel window once per row/column instead of testing
            # every tap; padding contributes exact zeros.
            u0 = -y0 if y0 < 0 else 0
            u1 = ih - y0 if y0 + kh > ih else kh
            for j in range(ow):
                x0 = j * stride - pad
                v0 = -x0 if x0 < 0 else 0
                v1 = iw - x0 if x0 + kw > iw else kw
                for f in range(oc):
                    acc = b[f]
                    for c in range(ic):
                        for u in range(u0, u1):
                            y = y0 + u
                            for v in range(v0, v1):
                                xx = x0 + v
                                acc += (<double> w[f, c, u, v]) * (<double> x[c, y, xx])
                    out[f, i, j] = <float> acc
    return out_arr


def maxpool2d(const float[:, :, ::1] x, int kernel, int stride):
    """Max pooling over kernel x kernel windows; output size floors."""
    cdef Py_ssize_t ic = x.shape[0], ih = x.shape[1], iw = x.shape[2]
    cdef Py_ssize_t oh = (ih - kernel) // stride + 1
    cdef Py_ssize_t ow = (iw - kernel) // stride + 1
    out_arr = np.empty((ic, oh, ow), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, i, j, u, v, y0, x0
    cdef float best, cur
    with nogil:
        for c in range(ic):
            for i in range(oh):
                y0 = i * stride
                for j in range(ow):
                    x0 = j * stride
                    best = x[c, y0, x0]
                    for u in range(kernel):
                        for v in range(kernel):
                            cur = x[c, y0 + u, x0 + v]
                            if cur > best:
                                best = cur
                    out[c, i, j] = best
    return out_arr
