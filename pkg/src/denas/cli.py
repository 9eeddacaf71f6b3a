"""Command line: lut, prior, search, decode, train, eval, stats, spacesize."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import decoder as dc
from . import pipeline as P
from . import stats as S
from .autodiff import precision
from .config import ConfigError, RunConfig
from .prior import PriorModel
from .regularizers import LatencyTable
from .supernet import PartSpec, estimate_space_size

log = logging.getLogger("denas")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _config(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = RunConfig.load(args.config, overrides)
    for o in overrides:
        log.info("override %s", o)
    return cfg


def _guard(path, force):
    if Path(path).exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True))


def _load_prior(run):
    path = run / "prior" / "prior.pkl"
    if not path.exists():
        raise UsageError(f"{path} missing; run `denas prior` first")
    return PriorModel.load(path)


def _table_for(cfg, run):
    if cfg["search"]["lam"] == 0:
        return None
    path = Path(cfg["lut"]["path"] or run / "lut.json")
    if not path.exists():
        raise UsageError(f"search.lam > 0 needs a latency table at {path}; run `denas lut` first")
    table = LatencyTable.load(path)
    if not table.covers(cfg.part_spec()):
        raise UsageError(f"{path} does not cover the configured part spec")
    return table


# commands -----------------------------------------------------------------------


def cmd_lut(args, cfg):
    run = cfg.run_dir(args.out)
    path = Path(cfg["lut"]["path"] or run / "lut.json")
    _guard(path, args.force)
    if args.reps is not None:
        cfg.d["lut"]["reps"] = args.reps
    table = P.lut_stage(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.save(path)
    print(f"wrote {path} ({len(table.entries)} entries, reps={table.meta['reps']})")


def cmd_prior(args, cfg):
    run = cfg.run_dir(args.out)
    path = run / "prior" / "prior.pkl"
    _guard(path, args.force)
    cfg.write(run / "prior" / "config.json")
    ds, _ = P.build_dataset(cfg)
    D.write_manifest(run / "manifest.json", ds.manifest)
    prior, hist = P.prior_stage(cfg, ds, log.info)
    p = cfg["data"]["patch"]
    prior.save(path, {"boundary_shapes": prior.boundary_shapes(p, p)})
    _write_json(run / "prior" / "history.json", hist)
    print(f"wrote {path} (best val psnr {max(h['val_psnr'] for h in hist):.2f} dB)")


def cmd_search(args, cfg):
    run = cfg.run_dir(args.out)
    if args.force:
        for ck in run.glob("part*/checkpoint.pkl"):
            ck.unlink()
    prior = _load_prior(run)
    table = _table_for(cfg, run)
    ds, _ = P.build_dataset(cfg)
    cfg.write(run / "config.json")
    P.search_stage(cfg, prior, ds, table, run, args.parallel, log.info)
    print(f"wrote {run}/part*/archweights.json")


def cmd_decode(args, cfg):
    run = Path(args.run_dir) if args.run_dir else cfg.run_dir(args.out)
    try:
        arch = dc.decode_run(run)
    except dc.DecodeError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.output) if args.output else run / "arch.json"
    out.write_text(dc.dumps(arch))
    print(f"wrote {out}")


def _read_arch(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read architecture {path}: {exc}") from exc


def cmd_train(args, cfg):
    run = cfg.run_dir(args.out)
    arch = _read_arch(args.arch or run / "arch.json")
    out = run / "train"
    _guard(out / "model.pkl", args.force)
    prior_path = run / "prior" / "prior.pkl"
    prior = PriorModel.load(prior_path) if prior_path.exists() else None
    ds, eval_clean = P.build_dataset(cfg)
    cfg.write(out / "config.json")
    net, hist = P.train_stage(cfg, arch, ds, prior, log.info)
    net.save(out / "model.pkl")
    report = P.eval_stage(cfg, net, eval_clean, {"history": hist})
    _write_json(out / "report.json", report)
    for row in report["cases"]:
        print(f"{row['case']}: psnr {row['psnr']:.2f} (noisy {row['noisy_psnr']:.2f}) ssim {row['ssim']:.4f}")


def cmd_eval(args, cfg):
    run = cfg.run_dir(args.out)
    path = Path(args.model) if args.model else run / "train" / "model.pkl"
    if not path.exists():
        raise UsageError(f"{path} missing")
    net = dc.DecodedNet.load(path)
    _, eval_clean = P.build_dataset(cfg)
    report = P.eval_stage(cfg, net, eval_clean, {"model": str(path)})
    _write_json(run / "eval" / "report.json", report)
    for row in report["cases"]:
        print(f"{row['case']}: psnr {row['psnr']:.2f} (noisy {row['noisy_psnr']:.2f}) ssim {row['ssim']:.4f}")


def cmd_stats(args, cfg):
    run = cfg.run_dir(args.out)
    archs = [_read_arch(p) for p in args.archs] if args.archs else [_read_arch(run / "arch.json")]
    out = run / "stats"
    rates = [dict(r, arch=a) for a, aj in enumerate(archs) for r in S.operator_rates(aj)]
    S.write_csv(out / "operator_rates.csv", rates)
    S.write_csv(out / "resolution_preferences.csv", S.resolution_preferences(archs))
    table = LatencyTable.load(args.lut) if args.lut else None
    S.write_csv(out / "complexity.csv", S.complexity(archs, lambda aj: dc.DecodedNet(aj, cfg.seed), table))
    if args.checkpoint:
        net = dc.DecodedNet.load(args.checkpoint)
        ds, _ = P.build_dataset(cfg)
        x = ds.noisy_arch[: cfg["stats"]["feature_batch"]]
        S.write_csv(out / "feature_stats.csv", S.feature_stats(net, x))
    print(f"wrote {out}/*.csv")


def cmd_spacesize(args, cfg):
    spec = cfg.part_spec()
    if args.paper:
        spec = PartSpec(rows=3, cells_per_row=4, base_width=16)
    parts = cfg["search"]["parts"]
    value = estimate_space_size(spec, parts)
    report = {"rows": spec.rows, "cells_per_row": spec.cells_per_row, "ops": len(spec.ops), "widths": len(spec.menu), "parts": parts, "log10": value}
    print(json.dumps(report, sort_keys=True))


COMMANDS = {
    "lut": cmd_lut,
    "prior": cmd_prior,
    "search": cmd_search,
    "decode": cmd_decode,
    "train": cmd_train,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "spacesize": cmd_spacesize,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="run directory (default runs_dir/name)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--parallel", action="store_true", help="search parts in separate processes")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="denas", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("lut", parents=[common], help="build the latency lookup table")
    p.add_argument("--reps", type=int)
    sub.add_parser("prior", parents=[common], help="train the prior network")
    sub.add_parser("search", parents=[common], help="search all parts")
    p = sub.add_parser("decode", parents=[common], help="decode a search run")
    p.add_argument("run_dir", nargs="?")
    p.add_argument("-o", "--output")
    p = sub.add_parser("train", parents=[common], help="train a decoded architecture from scratch")
    p.add_argument("arch", nargs="?")
    p = sub.add_parser("eval", parents=[common], help="evaluate a trained model")
    p.add_argument("model", nargs="?")
    p = sub.add_parser("stats", parents=[common], help="architecture statistics as CSV")
    p.add_argument("archs", nargs="*")
    p.add_argument("--checkpoint")
    p.add_argument("--lut")
    p = sub.add_parser("spacesize", parents=[common], help="log10 of the search-space size")
    p.add_argument("--paper", action="store_true", help="use the 3-row, 4-cell geometry")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _config(args)
        with precision(np.dtype(cfg["dtype"])):
            COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - mapped to the internal-error exit code
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
