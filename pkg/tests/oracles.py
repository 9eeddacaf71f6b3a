"""Independent reference implementations used only by the tests.

Everything here is written with plain loops / direct formulas and never calls
into ``denas``'s primitives, so it can check them.
"""

import math

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, dilation=1, padding=0):
    n, c, h, wd = x.shape
    co, ci, k, _ = w.shape
    oh = (h + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    ow = (wd + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for bi in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0 if b is None else b[o]
                    for cc in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                y = i * stride - padding + ki * dilation
                                xx = j * stride - padding + kj * dilation
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += x[bi, cc, y, xx] * w[o, cc, ki, kj]
                    out[bi, o, i, j] = acc
    return out


def conv_transpose_loops(x, w, stride=2, padding=1):
    n, ci, h, wd = x.shape
    _, co, k, _ = w.shape
    oh = (h - 1) * stride - 2 * padding + k
    ow = (wd - 1) * stride - 2 * padding + k
    out = np.zeros((n, co, oh, ow))
    for bi in range(n):
        for c in range(ci):
            for i in range(h):
                for j in range(wd):
                    for o in range(co):
                        for ki in range(k):
                            for kj in range(k):
                                y = i * stride - padding + ki
                                xx = j * stride - padding + kj
                                if 0 <= y < oh and 0 <= xx < ow:
                                    out[bi, o, y, xx] += x[bi, c, i, j] * w[c, o, ki, kj]
    return out


def softmax(v):
    v = np.asarray(v, dtype=float)
    e = np.exp(v - v.max())
    return e / e.sum()


def window_attention_loops(x, wq, wk, wv, wo, window, shift):
    n, c, h, w = x.shape
    xs = np.roll(x, (-shift, -shift), axis=(2, 3))
    out = np.zeros_like(x)
    for b in range(n):
        for wy in range(0, h, window):
            for wx in range(0, w, window):
                pix = [(wy + i, wx + j) for i in range(window) for j in range(window)]
                feats = np.array([xs[b, :, y, xx] for y, xx in pix])
                q = feats @ wq.T
                k = feats @ wk.T
                v = feats @ wv.T
                for t, (y, xx) in enumerate(pix):
                    logits = np.array([q[t] @ k[u] / math.sqrt(c) for u in range(len(pix))])
                    a = softmax(logits)
                    z = sum(a[u] * v[u] for u in range(len(pix)))
                    out[b, :, y, xx] = wo @ z
    out = np.roll(out, (shift, shift), axis=(2, 3))
    return x + out


def gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_loops(a, b, data_range=1.0):
    """Naive sliding-window SSIM over valid 11x11 windows, averaged over channels."""
    win = gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    scores = []
    for ch in range(a.shape[0]):
        x, y = a[ch], b[ch]
        vals = []
        for i in range(x.shape[0] - 10):
            for j in range(x.shape[1] - 10):
                px = x[i : i + 11, j : j + 11]
                py = y[i : i + 11, j : j + 11]
                mx = (win * px).sum()
                my = (win * py).sum()
                vx = (win * px * px).sum() - mx * mx
                vy = (win * py * py).sum() - my * my
                cxy = (win * px * py).sum() - mx * my
                vals.append(
                    ((2 * mx * my + c1) * (2 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2))
                )
        scores.append(np.mean(vals))
    return float(np.mean(scores))


def psnr_direct(a, b, data_range=1.0):
    mse = sum((float(u) - float(v)) ** 2 for u, v in zip(np.ravel(a), np.ravel(b))) / np.size(a)
    return 10.0 * math.log10(data_range**2 / mse)
