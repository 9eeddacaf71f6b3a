"""End-to-end stages shared by the command line and the acceptance suite."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import data as D
from . import decoder as dc
from .prior import PriorModel, part_targets, train_prior
from .regularizers import LatencyTable, build_latency_table
from .search import PartData, part_specs, search_all
from .train import evaluate, make_report, train_model


def sources(cfg, seed_offset=0):
    d = cfg["data"]
    if d["corpus"]:
        names, images = D.load_folder(d["corpus"])
        return images, names
    n, size = d["n_images"], d["image_size"]
    seed = cfg.seed * 1000 + seed_offset
    return D.procedural_corpus(n, size, seed), [f"procedural:{seed}:{i}" for i in range(n)]


def build_dataset(cfg):
    """Training split and held-out clean patches (from a disjoint image set)."""
    d = cfg["data"]
    imgs, names = sources(cfg)
    ds = D.make_dataset(imgs, d["patch"], d["count"], d["split_ratio"], cfg.noise_case(), cfg.seed, names)
    eval_imgs, eval_names = sources(cfg, seed_offset=1) if not d["corpus"] else (imgs, names)
    _, eval_clean, _ = D.make_pairs(eval_imgs, d["patch"], d["eval_count"], cfg.noise_case(), cfg.seed + 7919, eval_names)
    return ds, eval_clean


def train_arrays(ds):
    return np.concatenate([ds.noisy_w, ds.noisy_arch]), np.concatenate([ds.clean_w, ds.clean_arch])


def eval_cases(cfg):
    sigmas = cfg["data"]["eval_sigmas"]
    return [D.NoiseCase("awgn", float(s)) for s in sigmas] + [D.NoiseCase("spatial", map_case=c) for c in (2, 3, 4)]


def prior_stage(cfg, ds, log=None):
    p = cfg["prior"]
    prior = PriorModel(3, p["width"], p["depth"], cfg.seed)
    hist = train_prior(
        prior,
        ds.noisy_w,
        ds.clean_w,
        ds.noisy_arch,
        ds.clean_arch,
        epochs=p["epochs"],
        lr=p["lr"],
        batch=p["batch"],
        patience=p["patience"],
        seed=cfg.seed,
        log=log,
    )
    return prior, hist


def specs_for(cfg, prior_width):
    return part_specs(cfg.part_spec(), prior_width, channels=3, parts=cfg.search_config().parts)


def search_datas(prior, ds):
    """Part inputs and prior targets: part 0 sees the noisy image, part i sees Omega_{i-1} features."""
    tw = part_targets(prior, ds.noisy_w)
    ta = part_targets(prior, ds.noisy_arch)
    return [PartData(w[0], w[1], a[0], a[1]) for w, a in zip(tw, ta)]


def lut_stage(cfg, spec=None):
    lt = cfg["lut"]
    return build_latency_table(
        spec or cfg.part_spec(), lt["reps"], lt["warmups"], lt["input_size"], lt["batch"], cfg.seed,
        chunks=min(lt["chunks"], lt["reps"]),
    )


def search_stage(cfg, prior, ds, table=None, out_dir=None, parallel=False, log=None):
    specs = specs_for(cfg, prior.width)
    datas = search_datas(prior, ds)
    if out_dir is not None:
        for i in range(len(specs)):
            cfg.write(Path(out_dir) / f"part{i}" / "config.json")
    results = search_all(specs, datas, cfg.search_config(), table, out_dir, parallel, cfg["dtype"], log)
    return [a for a, _ in results], [m for _, m in results]


def prior_features(prior, noisy):
    """Per-part prior outputs used as warmup targets during training."""
    return [t[1] for t in part_targets(prior, noisy)]


def train_stage(cfg, arch_json, ds, prior=None, log=None, seed=None):
    seed = cfg.seed if seed is None else seed
    net = dc.DecodedNet(arch_json, seed)
    noisy, clean = train_arrays(ds)
    feats = prior_features(prior, noisy) if prior is not None else None
    tc = cfg.train_config()
    tc.seed = seed
    hist = train_model(net, noisy, clean, tc, feats, log)
    return net, hist


def eval_stage(cfg, model, eval_clean, extra=None):
    rows = evaluate(model, eval_clean, eval_cases(cfg), seed=cfg.seed)
    return make_report(rows, cfg.train_config(), extra)


def load_table(path):
    return LatencyTable.load(path)


def run_pipeline(cfg, out_dir, table=None, parallel=False, log=None):
    """prior -> search -> decode -> train -> eval, writing the run layout under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.json")
    ds, eval_clean = build_dataset(cfg)
    D.write_manifest(out / "manifest.json", ds.manifest)
    prior, phist = prior_stage(cfg, ds, log)
    (out / "prior").mkdir(exist_ok=True)
    prior.save(out / "prior" / "prior.pkl", {"boundary_shapes": prior.boundary_shapes(cfg["data"]["patch"], cfg["data"]["patch"])})
    archs, _ = search_stage(cfg, prior, ds, table, out, parallel, log)
    arch_json = dc.decode(archs)
    (out / "arch.json").write_text(dc.dumps(arch_json))
    net, thist = train_stage(cfg, arch_json, ds, prior, log)
    (out / "train").mkdir(exist_ok=True)
    net.save(out / "train" / "model.pkl")
    report = eval_stage(cfg, net, eval_clean, {"history": thist})
    (out / "train" / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return {"prior": prior, "dataset": ds, "eval_clean": eval_clean, "arch": arch_json, "net": net, "report": report}
