"""Architecture statistics emitted as CSV plot data."""

from __future__ import annotations

import csv
from collections import Counter
from pathlib import Path

import numpy as np

from .autodiff import Tensor, no_grad
from .ops import OPERATOR_KINDS
from .regularizers import decoded_cost
from .supernet import PATHS


def operator_rates(arch_json):
    """Per part, the fraction of kept cells choosing each operator kind."""
    rows = []
    for p in arch_json["parts"]:
        counts = Counter(c["op"] for c in p["cells"])
        n = sum(counts.values())
        for op in OPERATOR_KINDS:
            rows.append({"part": p["part"], "op": op, "count": counts[op], "rate": counts[op] / n if n else 0.0})
    return rows


def resolution_preferences(arch_jsons):
    """Mean normalized path weights of the cells decoded to each operator kind."""
    acc = {op: [] for op in OPERATOR_KINDS}
    for aj in arch_jsons:
        for p in aj["parts"]:
            for c in p["cells"]:
                if "beta_bar" in c:
                    acc[c["op"]].append(c["beta_bar"])
    rows = []
    for op, vals in acc.items():
        mean = np.mean(vals, axis=0) if vals else np.full(3, np.nan)
        rows.append({"op": op, "n": len(vals), **{p: float(m) for p, m in zip(PATHS, mean)}})
    return rows


def complexity(arch_jsons, net_factory=None, table=None):
    """Per architecture and part: kept cells, parameter count and looked-up latency."""
    rows = []
    for a, aj in enumerate(arch_jsons):
        net = net_factory(aj) if net_factory else None
        for i, p in enumerate(aj["parts"]):
            row = {"arch": a, "part": p["part"], "cells": len(p["cells"])}
            row["params"] = net.parts[i].num_parameters() if net else ""
            row["latency_s"] = decoded_cost({"parts": [p]}, table) if table else ""
            rows.append(row)
    return rows


def feature_stats(net, x):
    """Mean and std of every kept cell's output on input ``x``."""
    rows = []
    with no_grad():
        h = Tensor(x)
        for i, part in enumerate(net.parts):
            rec = {}
            h = part(h, record=rec)
            for (r, l), f in sorted(rec.items(), key=lambda kv: (kv[0][1], kv[0][0])):
                c = part.cells_[(r, l)]
                rows.append(
                    {"part": i, "row": r, "layer": l, "op": c["op"], "mean": float(f.data.mean()), "std": float(f.data.std())}
                )
            if i in net.adapters:
                h = net.adapters[i].conv(h, padding=0)
    return rows


def write_csv(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
