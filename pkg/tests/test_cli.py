import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from denas import cli
from denas import decoder as dc
from denas import stats as S
from denas import supernet as sn
from denas.autodiff import Tensor, precision
from denas.config import ConfigError, RunConfig, default_config
from denas.train import TrainConfig, evaluate, make_report, train_model, validate_report

FIXTURES = Path(__file__).parent / "fixtures"

TINY = [
    "part.rows=1",
    "part.cells_per_row=2",
    "part.base_width=8",
    'part.ops=["conv_d1","conv_r","skip"]',
    "data.n_images=4",
    "data.image_size=24",
    "data.patch=16",
    "data.count=16",
    "data.eval_count=4",
    "data.eval_sigmas=[25]",
    "prior.width=4",
    "prior.epochs=2",
    "search.epochs=2",
    "search.batch=4",
    "train.epochs=2",
    "train.batch=4",
    "train.dp_warmup=1",
    "lut.reps=2",
    "lut.warmups=0",
    "lut.input_size=16",
]


def run(tmp_path, *args, tiny=True):
    argv = list(args) + ["--out", str(tmp_path)]
    if tiny:
        for s in TINY:
            argv += ["--set", s]
    return cli.main(argv)


# config --------------------------------------------------------------------------


def test_config_overrides_and_unknown_keys():
    cfg = RunConfig(overrides=["search.epochs=7", "data.noise.sigma=15", "name=x"])
    assert cfg.search_config().epochs == 7 and cfg.noise_case().sigma == 15.0 and cfg["name"] == "x"
    for bad in (["search.bogus=1"], ["nope=1"], ["search.epochs=abc"], ["search.epochs"], ["search.lr_w=-1"]):
        with pytest.raises(ConfigError):
            RunConfig(overrides=bad)
    with pytest.raises(ConfigError):
        RunConfig({"part": {"colour": 1}})


def test_config_roundtrip_and_seed_propagation(tmp_path):
    cfg = RunConfig(overrides=["seed=5"])
    assert cfg.part_spec().seed == cfg.search_config().seed == cfg.train_config().seed == 5
    cfg.write(tmp_path / "c.json")
    again = RunConfig.load(tmp_path / "c.json")
    assert again.to_json() == cfg.to_json()
    assert set(default_config()) == set(json.loads(cfg.to_json()))


def test_desk_defaults():
    cfg = RunConfig()
    d = cfg["data"]
    assert (d["count"], d["patch"], d["split_ratio"]) == (128, 32, 0.5)
    assert cfg.search_config().epochs == 30 and cfg.train_config().epochs == 60
    spec = cfg.part_spec()
    assert (spec.rows, spec.cells_per_row) == (2, 4)


# training ------------------------------------------------------------------------


def test_train_schedule_endpoints():
    tc = TrainConfig(epochs=60)
    assert tc.lr(0) == pytest.approx(2e-4, abs=1e-18) and tc.lr(59) == pytest.approx(1e-6, abs=1e-18)


def test_train_warmup_flag_and_report_schema():
    with precision(np.float64):
        rng = np.random.default_rng(0)
        spec = sn.PartSpec(rows=1, cells_per_row=2, base_width=8, ops=("conv_d1", "skip"))
        from denas.search import part_specs

        aj = dc.random_architecture(part_specs(spec, 4), rng)
        net = dc.DecodedNet(aj)
        clean = rng.uniform(size=(8, 3, 16, 16))
        noisy = clean + rng.normal(size=clean.shape) * 0.1
        feats = [rng.normal(size=(8, 4, 16, 16)), rng.normal(size=(8, 4, 16, 16)), rng.normal(size=(8, 3, 16, 16))]
        tc = TrainConfig(epochs=3, batch=4, dp_warmup=2, lr_max=1e-3)
        hist = train_model(net, noisy, clean, tc, feats)
        assert [h["use_dp"] for h in hist] == [True, True, False]
        assert hist[0]["lr"] == 1e-3 and hist[-1]["lr"] == pytest.approx(1e-6)
        from denas.data import NoiseCase

        rows = evaluate(net, clean[:2], [NoiseCase("awgn", 25), NoiseCase("spatial", map_case=2)])
        report = validate_report(json.loads(json.dumps(make_report(rows, tc))))
        assert [r["case"] for r in report["cases"]] == ["awgn25", "case2"]
        with pytest.raises(ValueError):
            validate_report({"config": {}, "cases": [{"case": "x"}]})


# stats ---------------------------------------------------------------------------


def _random_archs(n, seed=0):
    rng = np.random.default_rng(seed)
    spec = sn.PartSpec(rows=2, cells_per_row=4, base_width=16)
    from denas.search import part_specs

    return [dc.random_architecture(part_specs(spec, 16), rng) for _ in range(n)]


def test_operator_rates_match_hand_count():
    for aj in _random_archs(20):
        rows = S.operator_rates(aj)
        for p in aj["parts"]:
            ops = [c["op"] for c in p["cells"]]
            mine = {r["op"]: r for r in rows if r["part"] == p["part"]}
            for op in sn.zoo.OPERATOR_KINDS:
                assert mine[op]["count"] == ops.count(op)
                assert mine[op]["rate"] == ops.count(op) / len(ops)
            assert abs(sum(r["rate"] for r in mine.values()) - 1.0) <= 1e-12


def test_all_skip_rate_is_one():
    spec = sn.PartSpec(rows=2, cells_per_row=3, base_width=16)
    arch = sn.ArchWeights.init(spec)
    for k in arch.alpha:
        arch.alpha[k].data[spec.ops.index("skip")] = 5.0
    aj = dc.decode([arch, arch, arch])
    for r in S.operator_rates(aj):
        assert r["rate"] == (1.0 if r["op"] == "skip" else 0.0)


def test_resolution_preferences_and_features():
    archs = _random_archs(3, seed=1)
    rows = S.resolution_preferences(archs)
    for r in rows:
        if r["n"]:
            assert abs(r["up"] + r["same"] + r["down"] - 1) < 1e-9
    with precision(np.float64):
        net = dc.DecodedNet(archs[0])
        feats = S.feature_stats(net, np.random.default_rng(0).normal(size=(2, 3, 16, 16)))
    assert len(feats) == sum(len(p["cells"]) for p in archs[0]["parts"])
    assert all(f["std"] >= 0 for f in feats)


# command line --------------------------------------------------------------------


def test_lut_refuses_overwrite_and_echoes_reps(tmp_path, capsys):
    assert run(tmp_path, "lut", "--reps", "3") == 0
    meta = json.loads((tmp_path / "lut.json").read_text())["meta"]
    assert meta["reps"] == 3
    assert run(tmp_path, "lut") == 2
    assert run(tmp_path, "lut", "--force") == 0


def test_usage_errors_exit_2(tmp_path):
    assert cli.main(["nonsense"]) == 2
    assert run(tmp_path, "search") == 2  # no prior yet
    assert cli.main(["spacesize", "--set", "search.bogus=1"]) == 2
    assert run(tmp_path, "decode", str(tmp_path / "nothing")) == 2
    assert run(tmp_path, "eval") == 2


def test_spacesize(capsys):
    assert cli.main(["spacesize", "--paper"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["log10"] - 1800) <= 180
    assert cli.main(["spacesize", "--set", 'part.ops=["skip"]', "--set", "part.menu=[1.0]", "--set", "part.rows=1"]) == 0
    assert json.loads(capsys.readouterr().out)["log10"] == 0.0


def test_decode_golden_fixture(tmp_path):
    src = FIXTURES / "run"
    shutil.copytree(src, tmp_path / "run")
    assert cli.main(["decode", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "arch.json").read_text() == (FIXTURES / "expected_arch.json").read_text()


def test_full_tiny_pipeline_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        assert run(d, "prior") == 0
        assert run(d, "search") == 0
        assert run(d, "decode") == 0
        assert run(d, "train") == 0
        assert run(d, "eval") == 0
        assert run(d, "stats", "--checkpoint", str(d / "train" / "model.pkl")) == 0
        outs.append(d)
    a, b = outs
    for rel in ["part0/archweights.json", "part2/metrics.csv", "arch.json", "train/report.json", "stats/operator_rates.csv"]:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    with open(a / "part1" / "metrics.csv") as fh:
        assert tuple(next(csv.reader(fh))) == ("epoch", "l_dp", "l_comp", "l_search", "lr_w", "lr_arch")
    assert json.loads((a / "part0" / "config.json").read_text())["search"]["epochs"] == 2
    validate_report(json.loads((a / "train" / "report.json").read_text()))
    assert run(a, "train") == 2
    feats = list(csv.DictReader(open(a / "stats" / "feature_stats.csv")))
    assert feats and {"part", "row", "layer", "op", "mean", "std"} <= set(feats[0])


def test_search_with_lambda_needs_table(tmp_path):
    assert run(tmp_path, "prior") == 0
    assert run(tmp_path, "search", "--set", "search.lam=0.001") == 2
    assert run(tmp_path, "lut") == 0
    assert run(tmp_path, "search", "--parallel", "--set", "search.lam=0.001") == 0
    report = json.loads((tmp_path / "part0" / "archweights.json").read_text())
    assert report["epochs_run"] == 2
