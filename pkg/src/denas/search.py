"""Part-wise alternating search of operator weights and architecture weights."""

from __future__ import annotations

import csv
import json
import os
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError, Tensor, backward, precision
from .regularizers import LossWeights, comp_loss, cost_vectors, prior_loss, search_loss
from .optim import Adam
from .supernet import ArchWeights, PartSpec, SuperPart

METRIC_COLUMNS = ("epoch", "l_dp", "l_comp", "l_search", "lr_w", "lr_arch")


@dataclass
class SearchConfig:
    epochs: int = 30
    batch: int = 16
    lr_w: float = 2e-4
    lr_arch: float = 1e-4
    lam: float = 0.0
    lam_alpha: float = 0.27
    lam_beta: float = 0.27
    lam_gamma: float = 0.46
    tem_start: float = 5.0
    tem_end: float = 0.1
    cell_mode: str = "single-op"
    alternation: str = "batch"
    plateau_window: int = 10
    plateau_tol: float = 1e-4
    seed: int = 0
    parts: int = 3

    def __post_init__(self):
        if self.lr_w <= 0 or self.lr_arch <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.alternation not in ("batch", "epoch"):
            raise ValueError("alternation must be 'batch' or 'epoch'")
        if self.tem_start <= 0 or self.tem_end <= 0:
            raise ValueError("temperatures must be positive")

    @property
    def weights(self):
        return LossWeights(self.lam, self.lam_alpha, self.lam_beta, self.lam_gamma)

    def temperature(self, epoch):
        if self.epochs == 1:
            return self.tem_start
        return self.tem_start + (self.tem_end - self.tem_start) * epoch / (self.epochs - 1)


class DivergenceError(RuntimeError):
    pass


class SearchError(RuntimeError):
    def __init__(self, msg, completed):
        super().__init__(msg)
        self.completed = completed


@dataclass
class PartData:
    """Inputs and prior targets for one part on the w split and the architecture split."""

    x_w: np.ndarray
    t_w: np.ndarray
    x_arch: np.ndarray
    t_arch: np.ndarray

    def __post_init__(self):
        if len(self.x_w) == 0 or len(self.x_arch) == 0:
            raise ValueError("empty split")


def part_specs(base, feature_width, channels=3, parts=3):
    """Geometry of S_0..S_2: image -> features -> features -> image residual."""
    specs = []
    for i in range(parts):
        d = base.to_dict()
        d["in_channels"] = channels if i == 0 else feature_width
        d["out_channels"] = channels if i == parts - 1 else feature_width
        d["seed"] = base.seed + i
        specs.append(PartSpec.from_dict(d))
    return specs


def _batches(n, batch, rng):
    order = rng.permutation(n)
    return [order[s : s + batch] for s in range(0, n, batch)]


class PartSearch:
    """State of one part's search: supernet weights, arch weights, optimizers and RNG."""

    def __init__(self, spec, config, table=None, part_id=0):
        self.spec, self.config, self.part_id = spec, config, part_id
        self.table = table
        self.costs = cost_vectors(spec, table) if table is not None else None
        self.part = SuperPart(spec, np.random.default_rng([config.seed, part_id, 1]))
        self.arch = ArchWeights.init(spec)
        self.opt_w = Adam(self.part.parameters(), config.lr_w)
        self.opt_a = Adam(self.arch.parameters(), config.lr_arch)
        self.rng = np.random.default_rng([config.seed, part_id, 2])
        self.epoch = 0
        self.metrics = []
        self.samples = []

    def _zero(self):
        self.opt_w.zero_grad()
        self.opt_a.zero_grad()

    def l_comp(self):
        if self.table is None:
            return None
        return comp_loss(self.arch, self.table, self.config.weights, self.costs)

    def arch_step(self, x, t, tem):
        y, sample = self.part(Tensor(x), self.arch, self.rng, tem, self.config.cell_mode)
        l_dp = prior_loss(y, Tensor(t))
        l_comp = self.l_comp() if self.config.lam > 0 else None
        loss = search_loss(l_dp, l_comp, self.config.weights)
        backward(loss)
        self.opt_a.step()
        self._zero()
        return float(l_dp.data), float(loss.data), sample

    def w_step(self, x, t, tem):
        y, sample = self.part(Tensor(x), self.arch, self.rng, tem, self.config.cell_mode)
        l_dp = prior_loss(y, Tensor(t))
        backward(l_dp)
        self.opt_w.step()
        self._zero()
        return float(l_dp.data), sample

    def run_epoch(self, data):
        """One alternating pass; returns the metrics row."""
        cfg = self.config
        tem = cfg.temperature(self.epoch)
        a_batches = _batches(len(data.x_arch), cfg.batch, self.rng)
        w_batches = _batches(len(data.x_w), cfg.batch, self.rng)
        dp_w, search_vals = [], []
        sample = None
        try:
            if cfg.alternation == "batch":
                for k in range(max(len(a_batches), len(w_batches))):
                    if k < len(a_batches):
                        ia = a_batches[k]
                        _, ls, sample = self.arch_step(data.x_arch[ia], data.t_arch[ia], tem)
                        search_vals.append(ls)
                    if k < len(w_batches):
                        iw = w_batches[k]
                        ld, sample = self.w_step(data.x_w[iw], data.t_w[iw], tem)
                        dp_w.append(ld)
            else:
                for ia in a_batches:
                    _, ls, sample = self.arch_step(data.x_arch[ia], data.t_arch[ia], tem)
                    search_vals.append(ls)
                for iw in w_batches:
                    ld, sample = self.w_step(data.x_w[iw], data.t_w[iw], tem)
                    dp_w.append(ld)
        except NonFiniteError as exc:
            raise DivergenceError(f"part {self.part_id} diverged at epoch {self.epoch} (seed {cfg.seed}): {exc}") from exc
        l_dp = float(np.mean(dp_w))
        if not np.isfinite(l_dp):
            raise DivergenceError(f"part {self.part_id}: L_dp is {l_dp} at epoch {self.epoch} (seed {cfg.seed})")
        lc = self.l_comp()
        row = {
            "epoch": self.epoch,
            "l_dp": l_dp,
            "l_comp": float(lc.data) if lc is not None else 0.0,
            "l_search": float(np.mean(search_vals)),
            "lr_w": self.opt_w.lr,
            "lr_arch": self.opt_a.lr,
        }
        self.metrics.append(row)
        self.samples.append({k: list(v) for k, v in sample.items()})
        self.epoch += 1
        return row

    def plateaued(self):
        w = self.config.plateau_window
        vals = [m["l_dp"] for m in self.metrics]
        if len(vals) <= w:
            return False
        return vals[-w - 1] - min(vals[-w:]) < self.config.plateau_tol

    def done(self):
        return self.epoch >= self.config.epochs or self.plateaued()

    # persistence ------------------------------------------------------------------

    def checkpoint(self):
        return {
            "epoch": self.epoch,
            "part": self.part.state_dict(),
            "arch": self.arch.to_dict(),
            "opt_w": self.opt_w.state_dict(),
            "opt_a": self.opt_a.state_dict(),
            "rng": self.rng.bit_generator.state,
            "metrics": self.metrics,
            "samples": self.samples,
        }

    def restore(self, ck):
        self.epoch = ck["epoch"]
        self.part.load_state_dict(ck["part"])
        loaded = ArchWeights.from_dict(ck["arch"])
        for p, q in zip(self.arch.parameters(), loaded.parameters()):
            p.data[...] = q.data
        self.opt_w.load_state_dict(ck["opt_w"])
        self.opt_a.load_state_dict(ck["opt_a"])
        self.rng.bit_generator.state = ck["rng"]
        self.metrics = list(ck["metrics"])
        self.samples = list(ck["samples"])


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in METRIC_COLUMNS})


def archweights_json(arch, part_id, search):
    d = arch.to_dict()
    d["part"] = part_id
    d["epochs_run"] = search.epoch
    return json.dumps(d, indent=1, sort_keys=True)


def search_part(i, spec, data, config, table=None, out_dir=None, resume=True, stop_after=None, log=None):
    """Search part ``i``; returns ``(ArchWeights, metrics)``.

    With ``out_dir`` every epoch is checkpointed to ``out_dir/checkpoint.pkl`` and a
    rerun resumes from it.  ``stop_after`` ends the call after that many epochs in
    this invocation (used to emulate an interruption).
    """
    s = PartSearch(spec, config, table, i)
    ck_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ck_path = out_dir / "checkpoint.pkl"
        if resume and ck_path.exists():
            with open(ck_path, "rb") as fh:
                s.restore(pickle.load(fh))
            if log:
                log(f"part {i}: resumed at epoch {s.epoch}")
    ran = 0
    while not s.done():
        if stop_after is not None and ran >= stop_after:
            return s.arch, s.metrics
        row = s.run_epoch(data)
        ran += 1
        if log:
            log(f"part {i} epoch {row['epoch']}: l_dp {row['l_dp']:.6f} l_comp {row['l_comp']:.4f}")
        if out_dir is not None:
            tmp = ck_path.with_suffix(".tmp")
            with open(tmp, "wb") as fh:
                pickle.dump(s.checkpoint(), fh)
            os.replace(tmp, ck_path)
            write_metrics(out_dir / "metrics.csv", s.metrics)
            with open(out_dir / "samples.jsonl", "w") as fh:
                for e, smp in enumerate(s.samples):
                    fh.write(json.dumps({"part": i, "epoch": e, "sample": smp}, sort_keys=True) + "\n")
    if out_dir is not None:
        (out_dir / "archweights.json").write_text(archweights_json(s.arch, i, s))
        write_metrics(out_dir / "metrics.csv", s.metrics)
    return s.arch, s.metrics


def _worker(args):
    i, spec_d, data, cfg_d, table, out_dir, dtype, threads = args
    from threadpoolctl import threadpool_limits

    with threadpool_limits(threads), precision(np.dtype(dtype)):
        arch, metrics = search_part(i, PartSpec.from_dict(spec_d), data, SearchConfig(**cfg_d), table, out_dir)
    return i, arch.to_dict(), metrics


def search_all(specs, datas, config, table=None, out_dir=None, parallel=False, dtype="float64", log=None):
    """Search every part; ``parallel`` runs them in separate processes.  Returns archweights and metrics per part."""
    jobs = []
    for i, (spec, data) in enumerate(zip(specs, datas)):
        part_dir = str(Path(out_dir) / f"part{i}") if out_dir is not None else None
        jobs.append((i, spec.to_dict(), data, asdict(config), table, part_dir, dtype, _threads(parallel)))
    results = {}
    if parallel and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            futures = [pool.submit(_worker, j) for j in jobs]
            errors = []
            for f in futures:
                try:
                    i, arch_d, metrics = f.result()
                    results[i] = (ArchWeights.from_dict(arch_d), metrics)
                except Exception as exc:  # noqa: BLE001 - reported with partial results
                    errors.append(exc)
            if errors:
                raise SearchError(f"{len(errors)} part(s) failed: {errors[0]}", sorted(results)) from errors[0]
    else:
        for j in jobs:
            try:
                with precision(np.dtype(dtype)):
                    arch, metrics = search_part(
                        j[0], specs[j[0]], datas[j[0]], config, table, j[5], log=log
                    )
            except Exception as exc:
                raise SearchError(f"part {j[0]} failed: {exc}", sorted(results)) from exc
            results[j[0]] = (arch, metrics)
    return [results[i] for i in range(len(jobs))]


def _threads(parallel):
    env = os.environ.get("DENAS_THREADS")
    if env:
        return max(1, int(env))
    return 1 if parallel else None
