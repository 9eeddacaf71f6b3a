"""Differentiable primitives.

Every function takes and returns :class:`Tensor` objects and records a node with
its own backward rule.  Feature maps are ``(N, C, H, W)``; architecture weights
are 1-D vectors.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor, record

LEAKY_SLOPE = 0.2


def _const(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise ----------------------------------------------------------------


def add(a, b):
    a = as_tensor(a) if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    sa, sb = a.shape, b.shape
    return record(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b):
    a = as_tensor(a) if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    sa, sb = a.shape, b.shape
    return record(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b):
    a = as_tensor(a) if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    ad, bd = a.data, b.data
    return record(
        "mul",
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(x, c):
    c = float(c)
    return record("scale", x.data * x.data.dtype.type(c), (x,), lambda g: (g * c,))


def leaky_relu(x, slope=LEAKY_SLOPE):
    d = x.data
    mask = d > 0
    factor = np.where(mask, 1.0, slope).astype(d.dtype)
    return record("leaky_relu", d * factor, (x,), lambda g: (g * factor,))


# reductions -----------------------------------------------------------------


def sum(x):  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return record("sum", np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape),))


def mean(x):
    shape, n = x.shape, x.size
    return record(
        "mean",
        np.asarray(x.data.mean()),
        (x,),
        lambda g: (np.broadcast_to(g / n, shape),),
    )


def l1(x):
    """Mean absolute value."""
    d = x.data
    n = d.size
    sign = np.sign(d)
    return record("l1", np.asarray(np.abs(d).mean()), (x,), lambda g: (g * sign / n,))


def l2(x):
    """Mean squared value."""
    d = x.data
    n = d.size
    return record("l2", np.asarray((d * d).mean()), (x,), lambda g: (g * 2.0 * d / n,))


def softmax(v, axis=-1):
    d = v.data
    e = np.exp(d - d.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", y, (v,), bw)


def weighted_sum(w, xs):
    """``sum_i w[i] * xs[i]`` for a 1-D weight tensor and same-shape tensors."""
    xs = list(xs)
    if w.ndim != 1 or w.shape[0] != len(xs):
        raise ValueError(f"weight vector of length {w.shape} for {len(xs)} tensors")
    if not xs:
        raise ValueError("weighted_sum of an empty list")
    shape = xs[0].shape
    for x in xs:
        if x.shape != shape:
            raise ValueError(f"shape mismatch in weighted_sum: {x.shape} vs {shape}")
    wd = w.data
    out = np.zeros(shape, dtype=xs[0].dtype)
    for wi, x in zip(wd, xs):
        out += wi * x.data
    datas = [x.data for x in xs]

    def bw(g):
        gw = np.array([np.vdot(g, d) for d in datas], dtype=wd.dtype)
        return (gw, *[g * wi for wi in wd])

    return record("weighted_sum", out, (w, *xs), bw)


# channel plumbing -----------------------------------------------------------


def concat(xs, axis=1):
    xs = list(xs)
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs))
        )

    return record("concat", np.concatenate([x.data for x in xs], axis=axis), xs, bw)


def narrow(x, start, stop, axis=1):
    """Slice ``[start, stop)`` along ``axis``."""
    shape = x.shape
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return record("narrow", np.ascontiguousarray(x.data[index]), (x,), bw)


def split(x, sizes, axis=1):
    out = []
    start = 0
    for s in sizes:
        out.append(narrow(x, start, start + s, axis))
        start += s
    if start != x.shape[axis]:
        raise ValueError(f"split sizes {sizes} do not cover axis of length {x.shape[axis]}")
    return out


def adjust_channels(x, width):
    """Leading-channel rule: zero-pad trailing channels or keep the leading ``width``."""
    c = x.shape[1]
    if width == c:
        return x
    if width < c:
        return narrow(x, 0, width, axis=1)
    n, _, h, w = x.shape
    out = np.zeros((n, width, h, w), dtype=x.dtype)
    out[:, :c] = x.data
    return record("pad_channels", out, (x,), lambda g: (g[:, :c],))


def slice_leading(w, n_out, n_in):
    """View ``w[:n_out, :n_in]``; gradients land in the leading block of ``w``."""
    if n_out == w.shape[0] and n_in == w.shape[1]:
        return w
    if not (1 <= n_out <= w.shape[0] and 1 <= n_in <= w.shape[1]):
        raise ValueError(f"slice ({n_out}, {n_in}) outside kernel of shape {w.shape}")
    shape = w.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:n_out, :n_in] = g
        return (full,)

    return record("slice_leading", w.data[:n_out, :n_in], (w,), bw)


# convolution family ----------------------------------------------------------


def same_padding(k, dilation=1):
    if k % 2 != 1:
        raise ValueError("same padding is defined for odd kernels only")
    return dilation * (k - 1) // 2


def conv2d(x, weight, bias=None, stride=1, dilation=1, padding=None):
    """Cross-correlation of ``x`` (N, C_in, H, W) with ``weight`` (C_out, C_in, k, k)."""
    if stride < 1 or dilation < 1:
        raise ValueError(f"stride and dilation must be positive, got {stride}, {dilation}")
    n, c, h, w = x.shape
    c_out, c_in, k, k2 = weight.shape
    if k != k2:
        raise ValueError("only square kernels are supported")
    if c != c_in:
        raise ValueError(f"input has {c} channels, kernel expects {c_in}")
    if padding is None:
        padding = same_padding(k, dilation)
    out_h = (h + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    out_w = (w + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValueError("kernel larger than padded input")
    cols = kernels.im2col(x.data, k, stride, dilation, padding, out_h, out_w)
    wm = weight.data.reshape(c_out, -1)
    out = np.matmul(wm, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, c_out, out_h, out_w)
    inputs = (x, weight) if bias is None else (x, weight, bias)
    wshape = weight.shape

    def bw(g):
        gm = g.reshape(n, c_out, out_h * out_w)
        gw = np.tensordot(gm, cols, axes=([0, 2], [0, 2])).reshape(wshape)
        gx = None
        if x.requires_grad:
            dcols = np.matmul(wm.T, gm)
            gx = kernels.col2im(dcols, c, h, w, k, stride, dilation, padding, out_h, out_w)
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=(0, 2))

    return record("conv2d", out, inputs, bw)


def conv_transpose2d(x, weight, bias=None, stride=2, padding=1):
    """Transposed convolution; ``weight`` is (C_in, C_out, k, k)."""
    n, c_in, h, w = x.shape
    wc_in, c_out, k, _ = weight.shape
    if c_in != wc_in:
        raise ValueError(f"input has {c_in} channels, kernel expects {wc_in}")
    out_h = (h - 1) * stride - 2 * padding + k
    out_w = (w - 1) * stride - 2 * padding + k
    wm = weight.data.reshape(c_in, -1)
    xm = x.data.reshape(n, c_in, h * w)
    cols = np.matmul(wm.T, xm)
    out = kernels.col2im(cols, c_out, out_h, out_w, k, stride, 1, padding, h, w)
    if bias is not None:
        out += bias.data[None, :, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)
    wshape = weight.shape

    def bw(g):
        dcols = kernels.im2col(g, k, stride, 1, padding, h, w)
        gx = np.matmul(wm, dcols).reshape(n, c_in, h, w)
        gw = np.tensordot(xm, dcols, axes=([0, 2], [0, 2])).reshape(wshape)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return record("conv_transpose2d", out, inputs, bw)


def pixel_shuffle(x, r):
    n, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"channels {c} not divisible by r^2={r * r}")
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def bw(g):
        return (pixel_unshuffle_array(g, r),)

    return record("pixel_shuffle", np.ascontiguousarray(out), (x,), bw)


def pixel_unshuffle_array(y, r):
    """Inverse permutation of :func:`pixel_shuffle` on a raw array."""
    n, c, hr, wr = y.shape
    h, w = hr // r, wr // r
    return np.ascontiguousarray(
        y.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)
    )


def avg_pool2(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even spatial size, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return record("avg_pool2", out, (x,), bw)


def _bilinear_matrix(n, dtype):
    # half-pixel centres, edge clamped
    u = np.zeros((2 * n, n), dtype=dtype)
    for o in range(2 * n):
        src = (o + 0.5) / 2.0 - 0.5
        src = max(src, 0.0)
        i0 = min(int(math.floor(src)), n - 1)
        i1 = min(i0 + 1, n - 1)
        frac = src - i0
        u[o, i0] += 1.0 - frac
        u[o, i1] += frac
    return u


def upsample_bilinear2(x):
    n, c, h, w = x.shape
    uh = _bilinear_matrix(h, x.dtype)
    uw = _bilinear_matrix(w, x.dtype)
    out = np.matmul(np.matmul(uh, x.data), uw.T)

    def bw(g):
        return (np.matmul(np.matmul(uh.T, g), uw),)

    return record("upsample_bilinear2", out, (x,), bw)


# normalisation / attention ---------------------------------------------------


def instance_norm(x, eps=1e-5):
    n, c, h, w = x.shape
    if h * w < 2:
        raise ValueError("instance_norm needs at least two spatial positions")
    d = x.data
    mu = d.mean(axis=(2, 3), keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def bw(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gym = (g * y).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - y * gym),)

    return record("instance_norm", y, (x,), bw)


def _partition(a, window):
    n, c, h, w = a.shape
    nh, nw = h // window, w // window
    t = a.reshape(n, c, nh, window, nw, window).transpose(0, 2, 4, 3, 5, 1)
    return t.reshape(n * nh * nw, window * window, c)


def _unpartition(t, shape, window):
    n, c, h, w = shape
    nh, nw = h // window, w // window
    a = t.reshape(n, nh, nw, window, window, c).transpose(0, 5, 1, 3, 2, 4)
    return a.reshape(n, c, h, w)


def window_attention(x, wq, wk, wv, wo, window, shift=0):
    """Single-head attention inside non-overlapping (optionally shifted) windows.

    Projections are ``(C, C)`` matrices applied per pixel; the block output is
    ``x + attention(x)``.
    """
    n, c, h, w = x.shape
    if h % window or w % window:
        raise ValueError(f"spatial size {h}x{w} not divisible by window {window}")
    if shift not in (0, window // 2):
        raise ValueError(f"shift must be 0 or window//2, got {shift}")
    for p in (wq, wk, wv, wo):
        if p.shape != (c, c):
            raise ValueError(f"projection of shape {p.shape} for {c} channels")
    xs = np.roll(x.data, (-shift, -shift), axis=(2, 3)) if shift else x.data
    xt = _partition(xs, window)
    q = xt @ wq.data.T
    k = xt @ wk.data.T
    v = xt @ wv.data.T
    scale_ = 1.0 / math.sqrt(c)
    s = (q @ k.transpose(0, 2, 1)) * scale_
    s -= s.max(axis=-1, keepdims=True)
    a = np.exp(s)
    a /= a.sum(axis=-1, keepdims=True)
    z = a @ v
    o = z @ wo.data.T
    attn = _unpartition(o, xs.shape, window)
    if shift:
        attn = np.roll(attn, (shift, shift), axis=(2, 3))
    out = x.data + attn

    def bw(g):
        gs = np.roll(g, (-shift, -shift), axis=(2, 3)) if shift else g
        go = _partition(gs, window)
        gwo = np.einsum("bnc,bnd->cd", go, z)
        gz = go @ wo.data
        ga = gz @ v.transpose(0, 2, 1)
        gv = a.transpose(0, 2, 1) @ gz
        gsc = a * (ga - (ga * a).sum(axis=-1, keepdims=True)) * scale_
        gq = gsc @ k
        gk = gsc.transpose(0, 2, 1) @ q
        gwq = np.einsum("bnc,bnd->cd", gq, xt)
        gwk = np.einsum("bnc,bnd->cd", gk, xt)
        gwv = np.einsum("bnc,bnd->cd", gv, xt)
        gxt = gq @ wq.data + gk @ wk.data + gv @ wv.data
        gx = _unpartition(gxt, xs.shape, window)
        if shift:
            gx = np.roll(gx, (shift, shift), axis=(2, 3))
        return g + gx, gwq, gwk, gwv, gwo

    return record("window_attention", out, (x, wq, wk, wv, wo), bw)


def attention_weights(x, wq, wk, window, shift=0):
    """Raw attention matrices per window, ``(N*windows, n, n)``; for inspection only."""
    c = x.shape[1]
    xs = np.roll(x.data, (-shift, -shift), axis=(2, 3)) if shift else x.data
    xt = _partition(xs, window)
    s = (xt @ wq.data.T) @ (xt @ wk.data.T).transpose(0, 2, 1) / math.sqrt(c)
    s -= s.max(axis=-1, keepdims=True)
    a = np.exp(s)
    return a / a.sum(axis=-1, keepdims=True)


# losses ---------------------------------------------------------------------


def mse_loss(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return l2(sub(a, b))


def l1_loss(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return l1(sub(a, b))
