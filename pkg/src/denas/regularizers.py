"""Search regularizers: feature matching against a prior, and a latency lookup table."""

from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass

import numpy as np

from . import ops as zoo
from .autodiff import Tensor, no_grad
from .autodiff import functional as F
from .supernet import cell_key, path_range


@dataclass
class LossWeights:
    lam: float = 0.0
    lam_alpha: float = 0.27
    lam_beta: float = 0.27
    lam_gamma: float = 0.46

    def __post_init__(self):
        if abs(self.lam_alpha + self.lam_beta + self.lam_gamma - 1.0) > 1e-12:
            raise ValueError("lam_alpha + lam_beta + lam_gamma must equal 1")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


class TimerResolutionError(RuntimeError):
    pass


class LatencyTable:
    """Mean seconds per (operator, row, in-width index, out-width index)."""

    def __init__(self, entries, meta=None):
        self.entries = {tuple(k): float(v) for k, v in entries.items()}
        self.meta = dict(meta or {})
        bad = [k for k, v in self.entries.items() if not v > 0]
        if bad:
            raise ValueError(f"non-positive times for {bad[:3]}")

    def time(self, op, row, win, wout):
        try:
            return self.entries[(op, row, win, wout)]
        except KeyError:
            raise KeyError(f"latency table has no entry for {(op, row, win, wout)}") from None

    def covers(self, spec):
        return all(
            (op, r, i, j) in self.entries
            for op in spec.ops
            for r in range(spec.rows)
            for i in range(len(spec.menu))
            for j in range(len(spec.menu))
        )

    def rigged(self, factor, op="skip"):
        """Copy with ``op`` made ``factor`` times cheaper than the cheapest other kind."""
        out = dict(self.entries)
        for (kind, r, i, j), v in self.entries.items():
            if kind == op:
                others = [self.entries[(k, r, i, j)] for k, rr, ii, jj in self.entries if (rr, ii, jj) == (r, i, j) and k != op]
                out[(kind, r, i, j)] = min(others) / factor if others else v
        return LatencyTable(out, {**self.meta, "rigged": {op: factor}})

    def to_json(self):
        rows = [
            {"op": k[0], "row": k[1], "win": k[2], "wout": k[3], "mean_s": v}
            for k, v in sorted(self.entries.items())
        ]
        return json.dumps({"meta": self.meta, "entries": rows}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        entries = {(e["op"], e["row"], e["win"], e["wout"]): e["mean_s"] for e in d["entries"]}
        return cls(entries, d.get("meta", {}))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def build_latency_table(spec, reps=1000, warmups=10, input_size=32, batch=1, seed=0, clock=time.perf_counter, chunks=1):
    """Time every (operator, row, width pair) on random input; strictly serial.

    With ``chunks > 1`` the reps are split into that many rounds; each round times
    every entry once, and an entry stores the median of its round means.  Spreading
    an entry over the whole build keeps short slow spells on a busy host from
    shifting it.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if not 1 <= chunks <= reps:
        raise ValueError("chunks must lie in [1, reps]")
    sizes = [len(c) for c in np.array_split(np.arange(reps), chunks)]
    resolution = time.get_clock_info("perf_counter").resolution
    rng = np.random.default_rng(seed)
    jobs = []
    for r in range(spec.rows):
        wr = spec.row_width(r)
        size = input_size // 2**r
        for kind in spec.ops:
            op = zoo.make_operator(kind, wr, wr, rng, window=spec.window, shift=0, mlp_ratio=spec.mlp_ratio)
            for i in range(len(spec.menu)):
                x = Tensor(rng.normal(size=(batch, spec.width(r, i), size, size)))
                for j in range(len(spec.menu)):
                    jobs.append(((kind, r, i, j), op, x, spec.width(r, j)))
    means = {key: [] for key, *_ in jobs}
    with no_grad():
        for key, op, x, w_out in jobs:
            for _ in range(warmups):
                op(x, w_out)
        for n in sizes:
            for key, op, x, w_out in jobs:
                t0 = clock()
                for _ in range(n):
                    op(x, w_out)
                means[key].append((clock() - t0) / n)
    entries = {}
    for key, m in means.items():
        mean = float(np.median(m))
        if mean < 10 * resolution:
            raise TimerResolutionError(
                f"{key[0]} row {key[1]}: mean {mean:.3g}s is below 10x the timer resolution; "
                "use a larger input_size or batch"
            )
        entries[key] = mean
    meta = {
        "reps": reps,
        "chunks": chunks,
        "warmups": warmups,
        "host": platform.node() + " " + platform.processor(),
        "input_shape": [batch, spec.base_width, input_size, input_size],
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    return LatencyTable(entries, meta)


# complexity cost ----------------------------------------------------------------


def cost_vectors(spec, table):
    """Per-row millisecond cost vectors for alpha, beta (per path) and gamma."""
    n = len(spec.menu)
    t = np.zeros((len(spec.ops), spec.rows, n, n))
    for a, op in enumerate(spec.ops):
        for r in range(spec.rows):
            for i in range(n):
                for j in range(n):
                    t[a, r, i, j] = 1e3 * table.time(op, r, i, j)
    per_row = t.mean(axis=(0, 2, 3))
    out = {}
    for r in range(spec.rows):
        beta = np.array(
            [per_row[r + 1] if r + 1 < spec.rows else 0.0, per_row[r], per_row[r - 1] if r > 0 else 0.0]
        )
        out[r] = {"alpha": t[:, r].mean(axis=(1, 2)), "beta": beta, "gamma": t[:, r].mean(axis=(0, 1))}
    return out


def _expected(logits, cost):
    return F.sum(F.mul(F.softmax(logits), Tensor(cost, dtype=logits.dtype)))


def comp_terms(arch, table, costs=None):
    """``(L_alpha, L_beta, L_gamma)`` summed over cells, each a softmax-weighted time in ms."""
    spec = arch.spec
    costs = costs or cost_vectors(spec, table)
    la, lb, lg = [], [], []
    for r, l in spec.cells():
        k = cell_key(r, l)
        c = costs[r]
        la.append(_expected(arch.alpha[k], c["alpha"]))
        lg.append(_expected(arch.gamma[k], c["gamma"]))
        start, stop = path_range(r, spec.rows)
        if stop - start > 1:
            lb.append(_expected(F.narrow(arch.beta[k], start, stop, axis=0), c["beta"][start:stop]))
        else:
            lb.append(Tensor(np.array(c["beta"][start]), dtype=arch.beta[k].dtype))
    return _sum(la), _sum(lb), _sum(lg)


def _sum(xs):
    out = xs[0]
    for x in xs[1:]:
        out = F.add(out, x)
    return out


def comp_loss(arch, table, weights=None, costs=None):
    weights = weights or LossWeights()
    la, lb, lg = comp_terms(arch, table, costs)
    return _sum([F.scale(la, weights.lam_alpha), F.scale(lb, weights.lam_beta), F.scale(lg, weights.lam_gamma)])


def prior_loss(s_out, omega_out):
    if s_out.shape != omega_out.shape:
        raise ValueError(f"shape mismatch {s_out.shape} vs {omega_out.shape}")
    return F.mse_loss(s_out, omega_out)


def search_loss(l_dp, l_comp, weights):
    if weights.lam == 0.0 or l_comp is None:
        return l_dp
    return F.add(l_dp, F.scale(l_comp, weights.lam))


def train_loss(pred, gt, s_outs=(), omega_outs=(), use_dp=True):
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    loss = F.l1_loss(pred, gt)
    if use_dp:
        for s, o in zip(s_outs, omega_outs):
            loss = F.add(loss, prior_loss(s, o))
    return loss


def use_dp(epoch, warmup):
    return epoch < warmup


def decoded_cost(arch_json, table):
    """Sum of looked-up seconds over the cells kept in a decoded architecture."""
    total = 0.0
    for part in arch_json["parts"]:
        for c in part["cells"]:
            total += table.time(c["op"], c["row"], c["i_in"], c["i_out"])
    return total
