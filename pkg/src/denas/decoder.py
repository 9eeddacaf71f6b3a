"""Discretize searched weights: threshold rules, reverse BFS pruning, runnable assembly."""

from __future__ import annotations

import json
import math
import pickle
from collections import deque

import numpy as np

from . import ops as zoo
from .autodiff import Module
from .autodiff import functional as F
from .supernet import PATHS, ArchWeights, cell_key


class DecodeError(ValueError):
    pass


def _descending(v):
    return sorted(range(len(v)), key=lambda i: (-v[i], i))


def _cumulative(v):
    chosen, mass = [], 0.0
    for i in _descending(v):
        chosen.append(i)
        mass += v[i]
        if mass > 0.5:
            break
    return sorted(chosen)


def decode_resolution(beta_bar):
    """Paths whose normalized mass first exceeds 0.5, largest first (ties in up/same/down order)."""
    v = [float(x) for x in beta_bar]
    if len(v) != 3:
        raise DecodeError("beta_bar must have 3 entries (up, same, down)")
    return [PATHS[i] for i in _cumulative(v)]


def decode_dense(delta_bar):
    """Dense-history indices whose mass first exceeds 0.5 (ties favour the lower index)."""
    return _cumulative([float(x) for x in delta_bar])


def decode_cell_and_kernel(alpha, gamma, ops=zoo.OPERATOR_KINDS):
    """Arg-max operator and width index; ``np.argmax`` keeps the first (menu-order) maximum."""
    return ops[int(np.argmax(alpha))], int(np.argmax(gamma))


def decode_cells(arch):
    """Per-cell discrete choices for every live cell of a part (before pruning)."""
    spec = arch.spec
    cells = {}
    for r, l in spec.cells():
        k = cell_key(r, l)
        nb = arch.normalized(k)
        op, i_out = decode_cell_and_kernel(arch.alpha[k].data, arch.gamma[k].data, spec.ops)
        i_in = 0 if l == 0 else int(np.argmax(arch.gamma[cell_key(r, l - 1)].data))
        cells[(r, l)] = {
            "row": r,
            "layer": l,
            "op": op,
            "paths": decode_resolution(nb["beta"]),
            "dense": decode_dense(nb["delta"]),
            "i_in": i_in,
            "i_out": i_out,
            "w_in": spec.width(r, i_in),
            "w_out": spec.width(r, i_out),
            "beta_bar": [round(float(b), 12) for b in nb["beta"]],
        }
    return cells


def cell_sources(cell):
    """``(cells, entries)`` consumed by a decoded cell; cells as (row, layer) pairs."""
    r, l = cell["row"], cell["layer"]
    srcs, entries = set(), set()
    uses_res = False
    for k in cell["dense"]:
        if k == l:
            uses_res = True
        elif k == 0:
            entries.add(r)
        else:
            srcs.add((r, k - 1))
    if uses_res:
        offsets = {"up": 1, "same": 0, "down": -1}
        for p in cell["paths"]:
            row = r + offsets[p]
            if l == 0:
                entries.add(row)
            else:
                srcs.add((row, l - 1))
            if p == "up":
                entries.add(r)
    return srcs, entries


def bfs_topology(cells, output):
    """Cells reachable backwards from ``output`` over the selected edges, in layer-major order."""
    if output not in cells:
        raise DecodeError(f"output cell {output} missing")
    if not cells[output]["dense"] or not cells[output]["paths"]:
        raise DecodeError(f"output cell {output} has no incoming path")
    seen = {output}
    queue = deque([output])
    while queue:
        node = queue.popleft()
        srcs, _ = cell_sources(cells[node])
        for s in sorted(srcs):
            if s not in cells:
                raise DecodeError(f"cell {node} consumes missing cell {s}")
            if s not in seen:
                seen.add(s)
                queue.append(s)
    return sorted(seen, key=lambda rl: (rl[1], rl[0]))


def decode_part(arch, part_id=0):
    spec = arch.spec
    cells = decode_cells(arch)
    kept = bfs_topology(cells, (0, spec.cells_per_row - 1))
    return {
        "part": part_id,
        "rows": spec.rows,
        "cells_per_row": spec.cells_per_row,
        "base_width": spec.base_width,
        "in_channels": spec.in_channels,
        "out_channels": spec.out_channels,
        "window": spec.window,
        "mlp_ratio": spec.mlp_ratio,
        "menu": list(spec.menu),
        "cells": [cells[k] for k in kept],
    }


def assemble(parts, residual=True):
    """Chain decoded parts; 1x1 adapters bridge mismatched boundary channel counts."""
    if not parts:
        raise DecodeError("no parts to assemble")
    adapters = []
    for a, b in zip(parts, parts[1:]):
        if a["out_channels"] != b["in_channels"]:
            adapters.append({"after_part": a["part"], "in": a["out_channels"], "out": b["in_channels"]})
    return {
        "stem_width": parts[0]["base_width"],
        "residual": residual,
        "parts": parts,
        "adapters": adapters,
    }


def decode(archs, residual=True):
    return assemble([decode_part(a, i) for i, a in enumerate(archs)], residual)


def dumps(arch_json):
    return json.dumps(arch_json, indent=1, sort_keys=True)


def decode_run(run_dir, residual=True):
    """Decode ``run_dir/part*/archweights.json``."""
    from pathlib import Path

    run_dir = Path(run_dir)
    files = sorted(run_dir.glob("part*/archweights.json"), key=lambda p: int(p.parent.name[4:]))
    if not files:
        raise DecodeError(f"{run_dir} has no part*/archweights.json")
    archs = []
    for f in files:
        try:
            archs.append(ArchWeights.from_dict(json.loads(f.read_text())))
        except (KeyError, ValueError, TypeError) as exc:
            raise DecodeError(f"malformed {f}: {exc}") from exc
    return decode(archs, residual)


# runnable network -----------------------------------------------------------------


class DecodedPart(Module):
    def __init__(self, pj, rng, head_gain=1.0):
        self.pj = pj
        base = pj["base_width"]
        self.cells_ = {(c["row"], c["layer"]): c for c in pj["cells"]}
        rows_needed = {0}
        for c in pj["cells"]:
            _, ents = cell_sources(c)
            rows_needed |= ents | {c["row"]}
        top = max(rows_needed)
        self.stem = zoo.SlimmableKernel(base, pj["in_channels"], 3, rng)
        self.entry_down = [zoo.Downsample(base * 2 ** (r - 1), rng) for r in range(1, top + 1)]
        self.blocks = {}
        for c in pj["cells"]:
            r, l = c["row"], c["layer"]
            wr = base * 2**r
            shift = 0 if l % 2 == 0 else pj["window"] // 2
            block = {"op": zoo.make_operator(c["op"], c["w_in"], c["w_out"], rng, pj["window"], shift, pj["mlp_ratio"])}
            if l in c["dense"]:
                if "up" in c["paths"]:
                    src_w = self._width(r + 1, l - 1)
                    block["up"] = zoo.Upsample(4 * math.ceil(src_w / 4), wr, c["w_in"], rng)
                if "down" in c["paths"]:
                    block["down"] = zoo.Downsample(self._width(r - 1, l - 1), rng, c_out=c["w_in"])
            self.blocks[cell_key(r, l)] = block
        last = self.cells_[(0, pj["cells_per_row"] - 1)]
        self.head = zoo.SlimmableKernel(pj["out_channels"], last["w_out"], 3, rng, gain=head_gain)

    def _width(self, r, l):
        if l < 0:
            return self.pj["base_width"] * 2**r
        return self.cells_[(r, l)]["w_out"]

    def forward(self, x, record=None):
        """``record``, when a dict, receives every cell output keyed by (row, layer)."""
        e = [F.leaky_relu(self.stem.conv(x))]
        for d in self.entry_down:
            e.append(F.leaky_relu(d(e[-1])))
        out = {}
        for c in self.pj["cells"]:
            r, l = c["row"], c["layer"]
            block = self.blocks[cell_key(r, l)]
            u = c["w_in"]

            def src(row):
                return e[row] if l == 0 else out[(row, l - 1)]

            inputs = []
            for k in c["dense"]:
                if k == l:
                    cands = []
                    for p in c["paths"]:
                        if p == "same":
                            cands.append(F.adjust_channels(src(r), u))
                        elif p == "up":
                            cands.append(block["up"](src(r + 1), e[r], u))
                        else:
                            cands.append(block["down"](src(r - 1), u))
                    inputs.append(_mean(cands))
                elif k == 0:
                    inputs.append(F.adjust_channels(e[r], u))
                else:
                    inputs.append(F.adjust_channels(out[(r, k - 1)], u))
            out[(r, l)] = block["op"](_mean(inputs), c["w_out"])
            if record is not None:
                record[(r, l)] = out[(r, l)]
        return self.head.conv(out[(0, self.pj["cells_per_row"] - 1)])


def _mean(xs):
    if len(xs) == 1:
        return xs[0]
    return F.weighted_sum(_const_weights(len(xs), xs[0].dtype), xs)


def _const_weights(n, dtype):
    from .autodiff import Tensor

    return Tensor(np.full(n, 1.0 / n), dtype=dtype)


class DecodedNet(Module):
    """``x + S_2(S_1(S_0(x)))`` (residual optional) with optional width adapters."""

    def __init__(self, arch_json, seed=0):
        rng = np.random.default_rng(seed)
        self.arch_json = arch_json
        self.seed = seed
        self.residual = arch_json.get("residual", True)
        n = len(arch_json["parts"])
        # the last part predicts the noise residual; a small head keeps the initial model near identity
        self.parts = [
            DecodedPart(pj, rng, 0.1 if self.residual and i == n - 1 else 1.0) for i, pj in enumerate(arch_json["parts"])
        ]
        self.adapters = {
            a["after_part"]: zoo.SlimmableKernel(a["out"], a["in"], 1, rng) for a in arch_json["adapters"]
        }

    def part_outputs(self, x):
        outs = []
        h = x
        for i, p in enumerate(self.parts):
            h = p(h)
            outs.append(h)
            if i in self.adapters:
                h = self.adapters[i].conv(h, padding=0)
        return outs

    def forward(self, x):
        y = self.part_outputs(x)[-1]
        return F.add(x, y) if self.residual else y

    def save(self, path):
        with open(path, "wb") as fh:
            pickle.dump({"arch": self.arch_json, "seed": self.seed, "state": self.state_dict()}, fh)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = pickle.load(fh)
        net = cls(blob["arch"], blob["seed"])
        net.load_state_dict(blob["state"])
        return net


def random_architecture(specs, rng, residual=True):
    """Decode random Gaussian arch weights; the baseline for the end-to-end comparison."""
    return decode([ArchWeights.init(s, rng, scale=1.0) for s in specs], residual)


def supernet_param_count(spec):
    from .supernet import SuperPart

    return SuperPart(spec, np.random.default_rng(0)).num_parameters()
