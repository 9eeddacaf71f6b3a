# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im for strided, dilated, zero-padded 2-D convolution.

Loop order matches ``_kernels_py`` so both backends accumulate in the same
sequence and agree bit for bit.
"""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


cdef inline void _valid_range(Py_ssize_t size, Py_ssize_t out, Py_ssize_t stride,
                              Py_ssize_t offset, Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # output indices o with 0 <= o*stride + offset < size
    cdef Py_ssize_t a = 0, b
    if offset < 0:
        a = (-offset + stride - 1) // stride
    b = out
    if (out - 1) * stride + offset >= size:
        b = (size - 1 - offset) // stride + 1 if size - 1 - offset >= 0 else 0
    if b < a:
        b = a
    lo[0] = a
    hi[0] = b


def im2col(real[:, :, :, ::1] x, int k, int stride, int dilation, int padding,
           int out_h, int out_w):
    cdef Py_ssize_t n_batch = x.shape[0], chans = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n_batch, chans * k * k, out_h * out_w), dtype=dtype)
    cdef real[:, :, ::1] cols = out
    cdef Py_ssize_t n, c, ki, kj, oh, ow, row, ih, base
    cdef Py_ssize_t oh_lo, oh_hi, ow_lo, ow_hi, off_h, off_w
    cdef real* src
    cdef real* dst
    with nogil:
        for ki in range(k):
            off_h = ki * dilation - padding
            _valid_range(h, out_h, stride, off_h, &oh_lo, &oh_hi)
            for kj in range(k):
                off_w = kj * dilation - padding
                _valid_range(w, out_w, stride, off_w, &ow_lo, &ow_hi)
                for n in range(n_batch):
                    for c in range(chans):
                        row = (c * k + ki) * k + kj
                        dst = &cols[n, row, 0]
                        for oh in range(0, oh_lo):
                            for ow in range(out_w):
                                dst[oh * out_w + ow] = 0
                        for oh in range(oh_lo, oh_hi):
                            ih = oh * stride + off_h
                            src = &x[n, c, ih, 0]
                            base = oh * out_w
                            for ow in range(0, ow_lo):
                                dst[base + ow] = 0
                            for ow in range(ow_lo, ow_hi):
                                dst[base + ow] = src[ow * stride + off_w]
                            for ow in range(ow_hi, out_w):
                                dst[base + ow] = 0
                        for oh in range(oh_hi, out_h):
                            for ow in range(out_w):
                                dst[oh * out_w + ow] = 0
    return out


def col2im(real[:, :, ::1] cols, int chans, int h, int w, int k, int stride,
           int dilation, int padding, int out_h, int out_w):
    cdef Py_ssize_t n_batch = cols.shape[0]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n_batch, chans, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] x = out
    cdef Py_ssize_t n, c, ki, kj, oh, ow, row, ih, base
    cdef Py_ssize_t oh_lo, oh_hi, ow_lo, ow_hi, off_h, off_w
    cdef real* src
    cdef real* dst
    with nogil:
        for ki in range(k):
            off_h = ki * dilation - padding
            _valid_range(h, out_h, stride, off_h, &oh_lo, &oh_hi)
            for kj in range(k):
                off_w = kj * dilation - padding
                _valid_range(w, out_w, stride, off_w, &ow_lo, &ow_hi)
                for n in range(n_batch):
                    for c in range(chans):
                        row = (c * k + ki) * k + kj
                        src = &cols[n, row, 0]
                        for oh in range(oh_lo, oh_hi):
                            ih = oh * stride + off_h
                            dst = &x[n, c, ih, 0]
                            base = oh * out_w
                            for ow in range(ow_lo, ow_hi):
                                dst[ow * stride + off_w] += src[base + ow]
    return out
