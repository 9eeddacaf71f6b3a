"""Searchable part: rows of cells over a resolution ladder.

Network level (paths beta, dense links delta) is a softmax mixture; the cell
level (operator alpha) and kernel level (width gamma) are sampled with
Gumbel-argmax.  Row ``r`` runs at ``H / 2**r`` with nominal width
``base_width * 2**r``.  Only cells whose output can still reach the part
output cell ``(0, L-1)`` are instantiated.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops as zoo
from .autodiff import Module, Parameter, record
from .autodiff import functional as F

PATHS = ("up", "same", "down")
CELL_MODES = ("single-op", "gdas", "darts")


@dataclass
class PartSpec:
    rows: int = 2
    cells_per_row: int = 4
    base_width: int = 16
    in_channels: int = 3
    out_channels: int = 16
    menu: tuple = zoo.WIDTH_MENU
    ops: tuple = zoo.OPERATOR_KINDS
    window: int = 4
    mlp_ratio: int = 2
    seed: int = 0

    def __post_init__(self):
        self.menu = tuple(float(r) for r in self.menu)
        self.ops = tuple(self.ops)
        if self.rows < 1:
            raise ValueError("rows must be >= 1")
        if self.cells_per_row < 2:
            raise ValueError("cells_per_row must be >= 2")
        if self.rows > self.cells_per_row:
            raise ValueError("rows may not exceed cells_per_row (deep rows would have no live cell)")
        if not self.menu or self.menu[0] != 1.0 or any(b >= a for a, b in zip(self.menu, self.menu[1:])):
            raise ValueError("width menu must start at 1 and decrease strictly")
        unknown = set(self.ops) - set(zoo.OPERATOR_KINDS)
        if unknown:
            raise ValueError(f"unknown operators {sorted(unknown)}")
        if self.rows > 1 and self.base_width % 2:
            raise ValueError("base_width must be even when rows > 1")
        if "IB" in self.ops:
            odd = [self.width(0, i) for i in range(len(self.menu)) if self.width(0, i) % 2]
            if odd:
                raise ValueError(f"IB needs even widths; base_width {self.base_width} yields {odd}")

    def row_width(self, r):
        return self.base_width * 2**r

    def width(self, r, index):
        return zoo.menu_width(self.row_width(r), index, self.menu)

    def live(self, r, l):
        return 0 <= r < self.rows and 0 <= l <= self.cells_per_row - 1 - r

    def cells(self):
        """Live cells in evaluation order (layer-major, then row)."""
        return [(r, l) for l in range(self.cells_per_row) for r in range(self.rows) if self.live(r, l)]

    def present_paths(self, r):
        return [p for p in PATHS if (p != "up" or r + 1 < self.rows) and (p != "down" or r > 0)]

    def to_dict(self):
        d = asdict(self)
        d["menu"] = list(self.menu)
        d["ops"] = list(self.ops)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def cell_key(r, l):
    return f"r{r}_l{l}"


def path_range(r, rows):
    """Contiguous slice ``[start, stop)`` of PATHS present for row ``r``."""
    start = 0 if r + 1 < rows else 1
    stop = 3 if r > 0 else 2
    return start, stop


# architecture weights ------------------------------------------------------------


@dataclass
class ArchWeights:
    """alpha/beta/gamma/delta logits per live cell, keyed ``r{row}_l{layer}``."""

    spec: PartSpec
    alpha: dict = field(default_factory=dict)
    beta: dict = field(default_factory=dict)
    gamma: dict = field(default_factory=dict)
    delta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, spec, rng=None, scale=0.0):
        aw = cls(spec)
        for r, l in spec.cells():
            k = cell_key(r, l)

            def draw(n):
                if rng is None or scale == 0.0:
                    return np.zeros(n)
                return scale * rng.normal(size=n)

            aw.alpha[k] = Parameter(draw(len(spec.ops)), name=f"alpha.{k}")
            aw.beta[k] = Parameter(draw(3), name=f"beta.{k}")
            aw.gamma[k] = Parameter(draw(len(spec.menu)), name=f"gamma.{k}")
            aw.delta[k] = Parameter(draw(l + 1), name=f"delta.{k}")
        return aw

    def parameters(self):
        out = []
        for k in sorted(self.alpha):
            out += [self.alpha[k], self.beta[k], self.gamma[k], self.delta[k]]
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def beta_bar(self, key):
        r = int(key.split("_")[0][1:])
        start, stop = path_range(r, self.spec.rows)
        full = np.zeros(3)
        full[start:stop] = softmax_np(self.beta[key].data[start:stop])
        return full

    def normalized(self, key):
        return {
            "alpha": softmax_np(self.alpha[key].data),
            "beta": self.beta_bar(key),
            "gamma": softmax_np(self.gamma[key].data),
            "delta": softmax_np(self.delta[key].data),
        }

    def to_dict(self):
        cells = []
        for r, l in self.spec.cells():
            k = cell_key(r, l)
            cells.append(
                {
                    "row": r,
                    "layer": l,
                    "alpha": [float(v) for v in self.alpha[k].data],
                    "beta": [float(v) for v in self.beta[k].data],
                    "paths": self.spec.present_paths(r),
                    "gamma": [float(v) for v in self.gamma[k].data],
                    "delta": [float(v) for v in self.delta[k].data],
                }
            )
        return {"spec": self.spec.to_dict(), "cells": cells}

    @classmethod
    def from_dict(cls, d):
        spec = PartSpec.from_dict(d["spec"])
        aw = cls.init(spec)
        for c in d["cells"]:
            k = cell_key(c["row"], c["layer"])
            if k not in aw.alpha:
                raise ValueError(f"cell {k} is not part of the declared geometry")
            for name in ("alpha", "beta", "gamma", "delta"):
                target = getattr(aw, name)[k]
                vals = np.asarray(c[name], dtype=target.dtype)
                if vals.shape != target.shape:
                    raise ValueError(f"{name} of {k}: expected {target.shape}, got {vals.shape}")
                target.data[...] = vals
        return aw

    def checksum(self):
        return float(sum(np.abs(p.data).sum() for p in self.parameters()))


def softmax_np(v):
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max())
    return e / e.sum()


# sampling primitives --------------------------------------------------------------


def gumbel_argmax(logits, rng):
    g = rng.gumbel(size=np.shape(logits))
    return int(np.argmax(np.asarray(logits) + g)), g


def relaxed(logits, g, tem):
    return softmax_np((np.asarray(logits, dtype=np.float64) + g) / tem)


def _vdot(a, b):
    return float(np.vdot(a, b))


def score_gate(y, alpha, i):
    """Identity on ``y``; the logits receive ``<dL/dy, y> (e_i - softmax(alpha))``."""

    def bw(g):
        s = _vdot(g, y.data)
        ga = -s * softmax_np(alpha.data)
        ga[i] += s
        return g, ga.astype(alpha.dtype)

    return record("score_gate", y.data, (y, alpha), bw)


def straight_through(y, logits, g_noise, tem, i):
    """Identity on ``y``; hard one-hot forward, relaxed softmax((logits+G)/tem) backward."""

    def bw(g):
        s = _vdot(g, y.data)
        z = relaxed(logits.data, g_noise, tem)
        gl = -(s / tem) * z[i] * z
        gl[i] += (s / tem) * z[i]
        return g, gl.astype(logits.dtype)

    return record("straight_through", y.data, (y, logits), bw)


def gdas_mix(outputs, alpha, g_noise, tem, i):
    """Forward ``outputs[i]``; logits see every candidate through the relaxed weights."""

    def bw(g):
        z = relaxed(alpha.data, g_noise, tem)
        dz = np.array([_vdot(g, o.data) for o in outputs])
        ga = z * (dz - np.dot(z, dz)) / tem
        grads = [None] * len(outputs)
        grads[i] = g
        return (*grads, ga.astype(alpha.dtype))

    return record("gdas_mix", outputs[i].data, (*outputs, alpha), bw)


# aggregation -----------------------------------------------------------------------


def aggregate_resolution(candidates, beta):
    """Mix of the present path candidates ``(up, same, down)``; None marks an absent path.

    ``beta`` holds logits for all three paths; the softmax runs over the present ones.
    """
    present = [i for i, c in enumerate(candidates) if c is not None]
    if not present:
        raise ValueError("no resolution candidate present")
    if present != list(range(present[0], present[-1] + 1)):
        raise ValueError("present paths must be contiguous in (up, same, down) order")
    shapes = {candidates[i].shape for i in present}
    if len(shapes) != 1:
        raise ValueError(f"candidate shapes differ: {sorted(shapes)}")
    if len(present) == 1:
        return candidates[present[0]]
    b = beta if len(present) == beta.shape[0] else F.narrow(beta, present[0], present[-1] + 1, axis=0)
    return F.weighted_sum(F.softmax(b), [candidates[i] for i in present])


def aggregate_dense(history, delta, unified_width):
    if not history:
        raise ValueError("dense history is empty")
    if delta.shape[0] != len(history):
        raise ValueError(f"delta length {delta.shape[0]} != history length {len(history)}")
    xs = [F.adjust_channels(h, unified_width) for h in history]
    if len(xs) == 1:
        return xs[0]
    return F.weighted_sum(F.softmax(delta), xs)


def cell_forward_darts(x, operators, alpha, out_width=None):
    if alpha.shape[0] != len(operators):
        raise ValueError(f"{alpha.shape[0]} weights for {len(operators)} operators")
    return F.weighted_sum(F.softmax(alpha), [op(x, out_width) if _slim(op) else op(x) for op in operators])


def _slim(op):
    return isinstance(op, zoo.Operator)


def cell_forward_sampled(x, operators, alpha, rng, tem, mode="single-op", out_width=None):
    """Run only the Gumbel-argmax operator; returns ``(y, index)``."""
    if tem <= 0:
        raise ValueError("temperature must be positive")
    if alpha.shape[0] != len(operators):
        raise ValueError(f"{alpha.shape[0]} weights for {len(operators)} operators")
    i, g = gumbel_argmax(alpha.data, rng)

    def run(op):
        return op(x, out_width) if _slim(op) else op(x)

    if mode == "single-op":
        return score_gate(run(operators[i]), alpha, i), i
    if mode == "gdas":
        return gdas_mix([run(op) for op in operators], alpha, g, tem, i), i
    raise ValueError(f"unknown sampling mode {mode!r}")


def kernel_forward(x, kernel, gamma_prev, gamma_cur, rng, tem=1.0, menu=zoo.WIDTH_MENU):
    """Convolve with a Gumbel-sampled leading slice of ``kernel``; returns ``(y, (i_in, i_out))``."""
    i_in, g_in = gumbel_argmax(gamma_prev.data, rng)
    i_out, g_out = gumbel_argmax(gamma_cur.data, rng)
    n_in = zoo.menu_width(kernel.c_in, i_in, menu)
    if x.shape[1] < n_in:
        raise ValueError(f"input has {x.shape[1]} channels, slice needs {n_in}")
    w = zoo.slice_kernel(kernel, i_in, i_out, menu)
    y = F.conv2d(F.adjust_channels(x, n_in), w, None)
    y = straight_through(y, gamma_cur, g_out, tem, i_out)
    y = straight_through(y, gamma_prev, g_in, tem, i_in)
    return y, (i_in, i_out)


# the part ---------------------------------------------------------------------------


class Cell(Module):
    def __init__(self, spec, r, l, rng):
        wr = spec.row_width(r)
        self.row, self.layer = r, l
        shift = 0 if l % 2 == 0 else spec.window // 2
        self.ops = [
            zoo.make_operator(k, wr, wr, rng, window=spec.window, shift=shift, mlp_ratio=spec.mlp_ratio)
            for k in spec.ops
        ]
        self.up = zoo.Upsample(spec.row_width(r + 1), wr, wr, rng) if r + 1 < spec.rows else None
        self.down = zoo.Downsample(spec.row_width(r - 1), rng, c_out=wr) if r > 0 else None


class SuperPart(Module):
    """Operator parameters ``w`` of one searchable part."""

    def __init__(self, spec, rng=None):
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        self.spec = spec
        self.stem = zoo.SlimmableKernel(spec.base_width, spec.in_channels, 3, rng)
        self.entry_down = [zoo.Downsample(spec.row_width(r - 1), rng) for r in range(1, spec.rows)]
        self.cells = {cell_key(r, l): Cell(spec, r, l, rng) for r, l in spec.cells()}
        self.head = zoo.SlimmableKernel(spec.out_channels, spec.base_width, 3, rng)

    def entries(self, x):
        h = x.shape[2]
        if h % 2 ** (self.spec.rows - 1) or x.shape[3] % 2 ** (self.spec.rows - 1):
            raise ValueError(f"spatial size {x.shape[2:]} not divisible by {2 ** (self.spec.rows - 1)}")
        e = [F.leaky_relu(self.stem.conv(x))]
        for d in self.entry_down:
            e.append(F.leaky_relu(d(e[-1])))
        return e

    def forward(self, x, arch, rng=None, tem=1.0, cell_mode="single-op", fixed=None):
        """Evaluate the part; returns ``(y, sample)`` with ``sample[key] = (op_index, width_index)``.

        ``fixed`` pins (op, width) per cell instead of sampling; ``cell_mode="darts"`` mixes
        all operators and only samples widths.
        """
        if cell_mode not in CELL_MODES:
            raise ValueError(f"cell_mode must be one of {CELL_MODES}")
        if x.shape[1] != self.spec.in_channels:
            raise ValueError(f"part expects {self.spec.in_channels} input channels, got {x.shape[1]}")
        if fixed is None and rng is None:
            raise ValueError("rng required for sampling")
        spec = self.spec
        entries = self.entries(x)
        out = {}
        sample = {}
        for r, l in spec.cells():
            k = cell_key(r, l)
            cell = self.cells[k]

            def prev(row):
                return entries[row] if l == 0 else out[(row, l - 1)]

            same = prev(r)
            u = same.shape[1]
            cand = [None, same, None]
            if cell.up is not None:
                cand[0] = cell.up(prev(r + 1), entries[r], u)
            if cell.down is not None:
                cand[2] = cell.down(prev(r - 1), u)
            o_res = aggregate_resolution(cand, arch.beta[k])
            if l == 0:
                history = [o_res]
            else:
                history = [entries[r]] + [out[(r, j)] for j in range(l - 1)] + [o_res]
            x_in = aggregate_dense(history, arch.delta[k], u)

            if fixed is not None:
                i_op, i_w = fixed[k]
                w_out = spec.width(r, i_w)
                y = cell.ops[i_op](x_in, w_out)
            else:
                i_w, g_w = gumbel_argmax(arch.gamma[k].data, rng)
                w_out = spec.width(r, i_w)
                if cell_mode == "darts":
                    i_op = int(np.argmax(arch.alpha[k].data))
                    y = cell_forward_darts(x_in, cell.ops, arch.alpha[k], w_out)
                else:
                    y, i_op = cell_forward_sampled(
                        x_in, cell.ops, arch.alpha[k], rng, tem, cell_mode, w_out
                    )
                y = straight_through(y, arch.gamma[k], g_w, tem, i_w)
            out[(r, l)] = y
            sample[k] = (i_op, i_w)
        last = out[(0, spec.cells_per_row - 1)]
        return self.head.conv(last), sample

    def op_parameters(self, key, index):
        return self.cells[key].ops[index].parameters()


def build_part(spec, rng=None):
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    return SuperPart(spec, rng), ArchWeights.init(spec)


# search-space size ------------------------------------------------------------------


def connections(pathways):
    """Connection patterns over ``pathways`` inputs: half the non-empty subsets."""
    return (2**pathways - 1) // 2


def cell_log10(pathways, n_ops, n_widths):
    return connections(pathways) * n_ops * math.log10(n_widths)


def space_size_log10(rows, cells_per_row, n_ops, n_widths, parts=3):
    """log10 of the candidate count over a full ``rows x cells_per_row`` grid.

    A cell at layer ``l`` sees ``l + 1`` same-row sources plus one source per
    neighbouring row; each connection pattern picks a width for every operator.
    """
    total = 0.0
    for r in range(rows):
        cross = int(r > 0) + int(r + 1 < rows)
        for l in range(cells_per_row):
            total += cell_log10(l + 1 + cross, n_ops, n_widths)
    return parts * total


def estimate_space_size(spec, parts=3):
    return space_size_log10(spec.rows, spec.cells_per_row, len(spec.ops), len(spec.menu), parts)
