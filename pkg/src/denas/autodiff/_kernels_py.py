"""Pure-numpy im2col / col2im, used when the compiled extension is absent."""

import numpy as np


def _window(padded, k, stride, dilation, out_h, out_w, ki, kj):
    r0 = ki * dilation
    c0 = kj * dilation
    return padded[
        :,
        :,
        r0 : r0 + stride * (out_h - 1) + 1 : stride,
        c0 : c0 + stride * (out_w - 1) + 1 : stride,
    ]


def im2col(x, k, stride, dilation, padding, out_h, out_w):
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, k, k, out_h, out_w), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = _window(padded, k, stride, dilation, out_h, out_w, ki, kj)
    return cols.reshape(n, c * k * k, out_h * out_w)


def col2im(cols, chans, h, w, k, stride, dilation, padding, out_h, out_w):
    n = cols.shape[0]
    cols = cols.reshape(n, chans, k, k, out_h, out_w)
    # oversize so strided windows that overhang the padded border still fit
    ph = max(h + 2 * padding, (k - 1) * dilation + stride * (out_h - 1) + 1)
    pw = max(w + 2 * padding, (k - 1) * dilation + stride * (out_w - 1) + 1)
    padded = np.zeros((n, chans, ph, pw), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            _window(padded, k, stride, dilation, out_h, out_w, ki, kj)[...] += cols[:, :, ki, kj]
    return np.ascontiguousarray(padded[:, :, padding : padding + h, padding : padding + w])
