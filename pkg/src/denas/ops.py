"""Cell-level operators, resolution modules and the down/up-sampling toy models.

Every operator is slimmable: it owns full-size kernels for its largest widths
and runs on the leading-channel slice selected by the kernel-level search.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Module, Parameter
from .autodiff import functional as F
from .autodiff.module import kaiming, zeros

OPERATOR_KINDS = ("conv_d1", "conv_d2", "conv_d3", "conv_r", "skip", "IB", "HIN", "SWIN")
WIDTH_MENU = (8 / 8, 7 / 8, 6 / 8, 5 / 8, 4 / 8)


def menu_width(full, index, menu=WIDTH_MENU):
    """Channel count for width-menu ``index`` of a ``full``-channel kernel (ceil, at least 1)."""
    if not 0 <= index < len(menu):
        raise IndexError(f"width index {index} outside menu of length {len(menu)}")
    return max(1, math.ceil(menu[index] * full - 1e-9))


class SlimmableKernel(Module):
    """Full convolution kernel ``(C_out, C_in, k, k)`` whose leading slices are valid kernels."""

    def __init__(self, c_out, c_in, k, rng, bias=True, gain=1.0, init_zero=False):
        self.c_out, self.c_in, self.k = c_out, c_in, k
        if init_zero:
            self.weight = zeros((c_out, c_in, k, k))
        else:
            self.weight = kaiming(rng, (c_out, c_in, k, k), c_in * k * k, gain)
        self.bias = zeros((c_out,)) if bias else None

    def sliced(self, n_out, n_in):
        if n_out > self.c_out or n_in > self.c_in:
            raise ValueError(
                f"slice ({n_out}, {n_in}) exceeds kernel ({self.c_out}, {self.c_in})"
            )
        w = F.slice_leading(self.weight, n_out, n_in)
        if self.bias is None:
            return w, None
        b = self.bias if n_out == self.c_out else F.narrow(self.bias, 0, n_out, axis=0)
        return w, b

    def conv(self, x, n_out=None, stride=1, dilation=1, padding=None):
        n_out = self.c_out if n_out is None else n_out
        w, b = self.sliced(n_out, x.shape[1])
        return F.conv2d(x, w, b, stride=stride, dilation=dilation, padding=padding)


def slice_kernel(kernel, i_in, i_out, menu=WIDTH_MENU):
    """Leading-channel view ``W[:R[i_out]*C_out, :R[i_in]*C_in]`` of a slimmable kernel."""
    for i in (i_in, i_out):
        if not 0 <= i < len(menu):
            raise IndexError(f"width index {i} outside menu of length {len(menu)}")
    return F.slice_leading(
        kernel.weight, menu_width(kernel.c_out, i_out, menu), menu_width(kernel.c_in, i_in, menu)
    )


# operators ---------------------------------------------------------------------


class Operator(Module):
    """Base for the eight cell operators; ``forward(x, out_width)``."""

    kind = None

    def __init__(self, max_in, max_out):
        self.max_in = max_in
        self.max_out = max_out

    def _check(self, x, out_width):
        out_width = self.max_out if out_width is None else out_width
        if x.shape[1] > self.max_in:
            raise ValueError(f"{self.kind}: input width {x.shape[1]} > {self.max_in}")
        if not 1 <= out_width <= self.max_out:
            raise ValueError(f"{self.kind}: output width {out_width} outside [1, {self.max_out}]")
        return out_width


class ConvOp(Operator):
    def __init__(self, max_in, max_out, rng, dilation):
        super().__init__(max_in, max_out)
        self.kind = f"conv_d{dilation}"
        self.dilation = dilation
        self.conv = SlimmableKernel(max_out, max_in, 3, rng)

    def forward(self, x, out_width=None):
        out_width = self._check(x, out_width)
        return F.leaky_relu(self.conv.conv(x, out_width, dilation=self.dilation))


class ConvResOp(Operator):
    kind = "conv_r"

    def __init__(self, max_in, max_out, rng):
        super().__init__(max_in, max_out)
        self.conv = SlimmableKernel(max_out, max_in, 3, rng, gain=0.5)

    def forward(self, x, out_width=None):
        out_width = self._check(x, out_width)
        return F.add(F.adjust_channels(x, out_width), F.leaky_relu(self.conv.conv(x, out_width)))


class SkipOp(Operator):
    kind = "skip"

    def forward(self, x, out_width=None):
        out_width = self._check(x, out_width)
        return F.adjust_channels(x, out_width)


class InvertibleBlock(Operator):
    """Additive coupling: ``y1 = x1``, ``y2 = x2 + F(x1)``, F a two-layer conv."""

    kind = "IB"

    def __init__(self, max_in, max_out, rng):
        super().__init__(max_in, max_out)
        half = max(1, max_out // 2)
        self.f1 = SlimmableKernel(half, half, 3, rng)
        self.f2 = SlimmableKernel(half, half, 3, rng, gain=0.5)

    def coupling(self, x1):
        h = x1.shape[1]
        return self.f2.conv(F.leaky_relu(self.f1.conv(x1, h)), h)

    def forward(self, x, out_width=None):
        out_width = self._check(x, out_width)
        if out_width % 2:
            raise ValueError(f"IB needs an even channel count, got {out_width}")
        x = F.adjust_channels(x, out_width)
        x1, x2 = F.split(x, [out_width // 2, out_width // 2])
        return F.concat([x1, F.add(x2, self.coupling(x1))])

    def inverse(self, y):
        c = y.shape[1]
        if c % 2:
            raise ValueError(f"IB needs an even channel count, got {c}")
        y1, y2 = F.split(y, [c // 2, c // 2])
        return F.concat([y1, F.sub(y2, self.coupling(y1))])


class HalfInstanceNormBlock(Operator):
    """conv -> instance-norm on the first half of channels -> leaky-relu -> conv, plus 1x1 shortcut."""

    kind = "HIN"

    def __init__(self, max_in, max_out, rng, eps=1e-5):
        super().__init__(max_in, max_out)
        self.eps = eps
        self.conv1 = SlimmableKernel(max_out, max_in, 3, rng)
        self.conv2 = SlimmableKernel(max_out, max_out, 3, rng, gain=0.5)
        self.shortcut = SlimmableKernel(max_out, max_in, 1, rng)

    def normalized(self, x, out_width):
        h = self.conv1.conv(x, out_width)
        half = out_width // 2
        if half == 0:
            return h
        a, b = F.split(h, [half, out_width - half])
        return F.concat([F.instance_norm(a, self.eps), b])

    def forward(self, x, out_width=None):
        out_width = self._check(x, out_width)
        h = F.leaky_relu(self.normalized(x, out_width))
        h = self.conv2.conv(h, out_width)
        return F.add(h, self.shortcut.conv(x, out_width, padding=0))


class SwinBlock(Operator):
    """Shifted-window attention followed by a pointwise MLP, both residual."""

    kind = "SWIN"

    def __init__(self, max_in, max_out, rng, window=4, shift=0, mlp_ratio=2):
        super().__init__(max_in, max_out)
        if shift not in (0, window // 2):
            raise ValueError("shift must be 0 or window // 2")
        self.window, self.shift, self.mlp_ratio = window, shift, mlp_ratio
        std = 1.0 / math.sqrt(max_out)
        self.wq = Parameter(rng.normal(0.0, std, size=(max_out, max_out)))
        self.wk = Parameter(rng.normal(0.0, std, size=(max_out, max_out)))
        self.wv = Parameter(rng.normal(0.0, std, size=(max_out, max_out)))
        self.wo = Parameter(rng.normal(0.0, 0.5 * std, size=(max_out, max_out)))
        self.mlp1 = SlimmableKernel(mlp_ratio * max_out, max_out, 1, rng)
        self.mlp2 = SlimmableKernel(max_out, mlp_ratio * max_out, 1, rng, gain=0.5)

    def forward(self, x, out_width=None):
        out_width = self._check(x, out_width)
        x = F.adjust_channels(x, out_width)
        proj = [F.slice_leading(p, out_width, out_width) for p in (self.wq, self.wk, self.wv, self.wo)]
        a = F.window_attention(x, *proj, window=self.window, shift=self.shift)
        h = F.leaky_relu(self.mlp1.conv(a, self.mlp_ratio * out_width, padding=0))
        return F.add(a, self.mlp2.conv(h, out_width, padding=0))


def make_operator(kind, max_in, max_out, rng, window=4, shift=0, mlp_ratio=2):
    if kind == "conv_d1":
        return ConvOp(max_in, max_out, rng, 1)
    if kind == "conv_d2":
        return ConvOp(max_in, max_out, rng, 2)
    if kind == "conv_d3":
        return ConvOp(max_in, max_out, rng, 3)
    if kind == "conv_r":
        return ConvResOp(max_in, max_out, rng)
    if kind == "skip":
        return SkipOp(max_in, max_out)
    if kind == "IB":
        return InvertibleBlock(max_in, max_out, rng)
    if kind == "HIN":
        return HalfInstanceNormBlock(max_in, max_out, rng)
    if kind == "SWIN":
        return SwinBlock(max_in, max_out, rng, window=window, shift=shift, mlp_ratio=mlp_ratio)
    raise ValueError(f"unknown operator kind {kind!r}")


def apply(op, x, out_width=None):
    return op.forward(x, out_width)


def invert_ib(op, y):
    if not isinstance(op, InvertibleBlock):
        raise TypeError(f"invert_ib needs an IB operator, got {op.kind}")
    return op.inverse(y)


# resolution modules ----------------------------------------------------------------


class Downsample(Module):
    """Stride-2 3x3 convolution; doubles the nominal channel count."""

    def __init__(self, c_in, rng, c_out=None):
        self.kernel = SlimmableKernel(c_out or 2 * c_in, c_in, 3, rng)

    def forward(self, x, out_width=None):
        return downsample(x, self.kernel, out_width)


def downsample(x, kernel, out_width=None):
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ValueError(f"downsample needs even spatial size, got {h}x{w}")
    return kernel.conv(x, out_width, stride=2, padding=1)


class Upsample(Module):
    """Pixel-shuffle the coarse map, concatenate the skip feature, 1x1 conv to the target width.

    The skip feature comes first in the concatenation so a narrower coarse
    input only trims trailing input channels of the 1x1 kernel.
    """

    def __init__(self, c_low, c_skip, c_out, rng):
        if c_low % 4:
            raise ValueError(f"coarse width {c_low} not divisible by 4")
        self.c_low, self.c_skip = c_low, c_skip
        self.kernel = SlimmableKernel(c_out, c_skip + c_low // 4, 1, rng)

    def forward(self, x_low, x_skip, out_width=None):
        return upsample(x_low, x_skip, self.kernel, out_width)


def upsample(x_low, x_skip, kernel, out_width=None):
    c = x_low.shape[1]
    if c % 4:
        x_low = F.adjust_channels(x_low, 4 * math.ceil(c / 4))
    shuffled = F.pixel_shuffle(x_low, 2)
    if shuffled.shape[2:] != x_skip.shape[2:]:
        raise ValueError(
            f"upsampled size {shuffled.shape[2:]} does not match skip {x_skip.shape[2:]}"
        )
    return kernel.conv(F.concat([x_skip, shuffled]), out_width, padding=0)


# toy models ----------------------------------------------------------------------

TOY_VARIANTS = {
    1: ("avgpool", "bilinear", False),
    2: ("avgpool", "bilinear", True),
    3: ("conv-stride2", "bilinear", True),
    4: ("conv-stride2", "transposed-conv", True),
    5: ("conv-stride2", "pixelshuffle", True),
}


class ToyModel(Module):
    """2 convs, down-sample, 12 convs, up-sample, 2 convs, long residual."""

    def __init__(self, variant, channels=3, width=16, body=12, rng=None):
        if variant not in TOY_VARIANTS:
            raise ValueError(f"toy model variant must be 1..5, got {variant}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.variant = variant
        self._down, self._up, self._concat = TOY_VARIANTS[variant]
        w = width
        wb = w if self._down == "avgpool" else 2 * w
        self.head = [SlimmableKernel(w, channels, 3, rng), SlimmableKernel(w, w, 3, rng)]
        self.down = SlimmableKernel(wb, w, 3, rng) if self._down == "conv-stride2" else None
        self.body = [SlimmableKernel(wb, wb, 3, rng) for _ in range(body)]
        if self._up == "transposed-conv":
            up_ch = w
            self.up = Parameter(rng.normal(0.0, 1.0 / math.sqrt(wb * 4), size=(wb, w, 4, 4)))
        elif self._up == "pixelshuffle":
            up_ch = wb // 4
            self.up = None
        else:
            up_ch = wb
            self.up = None
        self.fuse = SlimmableKernel(w, up_ch + (w if self._concat else 0), 1, rng)
        self.tail = [SlimmableKernel(w, w, 3, rng), SlimmableKernel(channels, w, 3, rng, gain=0.1)]

    @property
    def modules_used(self):
        names = {self._down, self._up}
        if self._concat:
            names.add("concatenation")
        return names

    def forward(self, x):
        h = F.leaky_relu(self.head[0].conv(x))
        skip = F.leaky_relu(self.head[1].conv(h))
        if self._down == "avgpool":
            h = F.avg_pool2(skip)
        else:
            h = F.leaky_relu(self.down.conv(skip, stride=2, padding=1))
        for k in self.body:
            h = F.leaky_relu(k.conv(h))
        if self._up == "bilinear":
            h = F.upsample_bilinear2(h)
        elif self._up == "transposed-conv":
            h = F.conv_transpose2d(h, self.up, stride=2, padding=1)
        else:
            h = F.pixel_shuffle(h, 2)
        if self._concat:
            h = F.concat([skip, h])
        h = F.leaky_relu(self.fuse.conv(h, padding=0))
        h = F.leaky_relu(self.tail[0].conv(h))
        return F.add(x, self.tail[1].conv(h))


def build_toy_model(variant, channels=3, width=16, body=12, rng=None):
    return ToyModel(variant, channels, width, body, rng)
