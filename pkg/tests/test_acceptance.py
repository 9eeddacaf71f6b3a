"""Acceptance suite: one section per criterion, each printing a PASS/FAIL line.

The long end-to-end checks (criteria 6, 8, 9, 10) share a session-scoped desk
run so the suite builds the prior and searches once per seed.
"""

import math
import time

import numpy as np
import pytest

from denas import data as D
from denas import decoder as dc
from denas import ops as zoo
from denas import supernet as sn
from denas.autodiff import Parameter, Tensor, backward, finite_difference_check, no_grad, precision
from denas.autodiff import functional as F
from denas.prior import PriorModel
from denas.search import part_specs

from fd_cases import composite_case, primitive_cases
from oracles import softmax


def report(cid, ok, detail):
    print(f"\ncriterion {cid}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


@pytest.fixture(autouse=True)
def _f64():
    with precision(np.float64):
        yield


class Scaled:
    def __init__(self, c):
        self.c = c

    def __call__(self, x):
        return F.scale(x, self.c)


# 1. gradient oracle suite ------------------------------------------------------------


def _composite_parts(seed):
    """Every composite building block as (name, loss-closure, params)."""
    rng = np.random.default_rng(seed)
    out = []

    def proj(y):
        return Tensor(np.random.default_rng(seed + 1000).normal(size=y.shape))

    def add(name, build, params):
        r = proj(build())
        out.append((name, lambda: F.sum(F.mul(build(), r)), params))

    for kind in zoo.OPERATOR_KINDS:
        op = zoo.make_operator(kind, 4, 4, rng, window=2, shift=1 if seed % 2 else 0)
        x = Parameter(rng.normal(size=(1, 4, 4, 4)))
        w = int(rng.choice([2, 4])) if kind != "IB" else 4
        add(f"op_{kind}", lambda op=op, x=x, w=w: op(x, w), [x] + op.parameters())
    down = zoo.Downsample(4, rng, c_out=6)
    xd = Parameter(rng.normal(size=(1, 4, 6, 6)))
    add("downsample", lambda: zoo.downsample(xd, down.kernel, 5), [xd] + down.parameters())
    up = zoo.Upsample(8, 4, 4, rng)
    xl, xs = Parameter(rng.normal(size=(1, 8, 3, 3))), Parameter(rng.normal(size=(1, 4, 6, 6)))
    add("upsample", lambda: up(xl, xs, 3), [xl, xs] + up.parameters())
    ops = [zoo.make_operator(k, 4, 4, rng) for k in ("conv_d1", "conv_r", "HIN")]
    alpha = Parameter(rng.normal(size=3))
    xc = Parameter(rng.normal(size=(1, 4, 4, 4)))
    add("cell_darts", lambda: sn.cell_forward_darts(xc, ops, alpha), [alpha, xc] + [p for o in ops for p in o.parameters()])

    spec = sn.PartSpec(rows=2, cells_per_row=2, base_width=4, in_channels=3, out_channels=3, ops=("conv_d1", "conv_r", "skip", "HIN"))
    part, arch = sn.build_part(spec, rng)
    fixed = {sn.cell_key(r, l): (int(rng.integers(4)), int(rng.integers(5))) for r, l in spec.cells()}
    xp = Parameter(rng.normal(size=(1, 3, 4, 4)))
    params = [xp] + [arch.beta[k] for k in arch.beta] + [arch.delta[k] for k in arch.delta] + part.parameters()
    add("super_part", lambda: part(xp, arch, fixed=fixed)[0], params)

    aj = dc.random_architecture(part_specs(spec, 3), rng)
    net = dc.DecodedNet(aj, seed)
    xn = Parameter(rng.normal(size=(1, 3, 4, 4)))
    add("decoded_net", lambda: net(xn), [xn] + net.parameters())

    prior = PriorModel(3, 4, 2, seed)
    xq = Parameter(rng.normal(size=(1, 3, 4, 4)))
    add("prior", lambda: prior(xq), [xq] + prior.parameters())
    f, ps = composite_case(seed)
    out.append(("conv_norm_attention", f, ps))
    return out


@pytest.mark.criterion(1, "gradient oracle suite (FD, 64-bit, 20 seeds)")
def test_criterion_1_gradient_oracles():
    t0 = time.perf_counter()
    worst, worst_name, checked = 0.0, "", 0
    for seed in range(20):
        cases = primitive_cases(seed) + _composite_parts(seed)
        for name, f, params in cases:
            err = finite_difference_check(f, params, h=1e-5, max_entries=8, seed=seed)
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name} (seed {seed})"
    elapsed = time.perf_counter() - t0
    report(
        1,
        worst <= 1e-4 and elapsed <= 600,
        f"{checked} checks, worst rel err {worst:.2e} at {worst_name}, {elapsed:.0f}s",
    )


# 2. strategy equivalence -------------------------------------------------------------


@pytest.mark.criterion(2, "DARTS closed form; single-op sparsity vs GDAS density")
def test_criterion_2_strategy_equivalence():
    rng = np.random.default_rng(21)
    ops = [zoo.make_operator(k, 4, 4, rng) for k in zoo.OPERATOR_KINDS]
    x = Tensor(rng.normal(size=(1, 4, 8, 8)))
    r = Tensor(rng.normal(size=(1, 4, 8, 8)))
    alpha = Parameter(rng.normal(size=8))
    backward(F.sum(F.mul(sn.cell_forward_darts(x, ops, alpha), r)))
    dots = np.array([np.vdot(r.data, op(x).data) for op in ops])
    a = softmax(alpha.data)
    closed = np.array([a[i] * sum((dots[i] - dots[m]) * a[m] for m in range(8) if m != i) for i in range(8)])
    darts_err = float(np.max(np.abs(alpha.grad - closed)))

    for op in ops:
        op.zero_grad()
    alpha = Parameter(rng.normal(size=8))
    y, i = sn.cell_forward_sampled(x, ops, alpha, np.random.default_rng(3), 1.0, "single-op")
    backward(F.sum(F.mul(y, r)))
    leaked = [k for j, op in enumerate(ops) if j != i for k, p in enumerate(op.parameters()) if p.grad is not None and np.any(p.grad)]

    for op in ops:
        op.zero_grad()
    alpha.grad = None
    y, _ = sn.cell_forward_sampled(x, ops, alpha, np.random.default_rng(3), 1.0, "gdas")
    backward(F.sum(F.mul(y, r)))
    gdas_dense = bool(np.all(alpha.grad != 0))
    _, g = sn.gumbel_argmax(alpha.data, np.random.default_rng(3))
    z = sn.relaxed(alpha.data, g, 1.0)
    # each operator's output appears in the GDAS alpha gradient
    gdas_err = float(np.max(np.abs(alpha.grad - z * (dots - z @ dots))))
    ok = darts_err <= 1e-10 and not leaked and gdas_dense and gdas_err <= 1e-10
    report(
        2,
        ok,
        f"darts |autodiff - closed| = {darts_err:.1e}; single-op nonzero grads in unsampled ops: {len(leaked)}; "
        f"gdas alpha grad all nonzero: {gdas_dense} (closed-form err {gdas_err:.1e})",
    )


# 3. estimator statistics -------------------------------------------------------------


@pytest.mark.criterion(3, "Gumbel frequencies and unbiased single-op estimator")
def test_criterion_3_estimator_statistics():
    alpha = np.array([0.7, -0.3, 0.1, -1.2])
    rng = np.random.default_rng(31)
    counts = np.zeros(4)
    for _ in range(100_000):
        counts[sn.gumbel_argmax(alpha, rng)[0]] += 1
    freq_err = float(np.max(np.abs(counts / 1e5 - softmax(alpha))))

    x = Tensor(rng.normal(size=(1, 2, 3, 3)))
    c = Tensor(rng.normal(size=(1, 2, 3, 3)))
    ops = [Scaled(1.0), Scaled(-0.5), Scaled(2.5)]
    a0 = np.array([0.3, -0.2, 0.1])
    losses = np.array([np.vdot(c.data, op(x).data) for op in ops])
    # exact gradient of E[L] = sum_i softmax(a)_i L_i, by enumeration over the 3 categories
    sig = softmax(a0)
    jac = np.diag(sig) - np.outer(sig, sig)
    exact = jac @ losses
    srng = np.random.default_rng(32)
    n = 10_000
    acc = np.zeros(3)
    for _ in range(n):
        a = Parameter(a0.copy())
        y, _ = sn.cell_forward_sampled(x, ops, a, srng, 1.0)
        backward(F.sum(F.mul(y, c)))
        acc += a.grad
    rel = float(np.linalg.norm(acc / n - exact) / np.linalg.norm(exact))
    report(3, freq_err <= 0.01 and rel <= 0.05, f"max |freq - softmax| = {freq_err:.4f}; MC relative error {rel:.3%} over {n} samples")


# 4. decoding rules -------------------------------------------------------------------


@pytest.mark.criterion(4, "threshold decoding fixtures and BFS pruning")
def test_criterion_4_decoding_rules():
    beta_cases = [
        ((0.6, 0.3, 0.1), ["up"]),
        ((0.4, 0.35, 0.25), ["up", "same"]),
        ((1 / 3, 1 / 3, 1 / 3), ["up", "same"]),
        ((0.5, 0.5, 0.0), ["up", "same"]),
        ((0.5, 0.25, 0.25), ["up", "same"]),
        ((0.25, 0.25, 0.5), ["up", "down"]),
        ((0.0, 0.0, 1.0), ["down"]),
    ]
    delta_cases = [
        ((0.9, 0.1), [0]),
        ((0.3, 0.3, 0.4), [0, 2]),
        ((0.25,) * 4, [0, 1, 2]),
        ((1.0,), [0]),
        ((0.5, 0.5), [0, 1]),
        ((0.5, 0.2, 0.3), [0, 2]),
    ]
    bad = [b for b, want in beta_cases if dc.decode_resolution(b) != want]
    bad += [d for d, want in delta_cases if dc.decode_dense(d) != want]

    def cell(r, l, dense, paths):
        return {"row": r, "layer": l, "op": "conv_d1", "paths": paths, "dense": dense}

    cells = {
        (0, 0): cell(0, 0, [0], ["same"]),
        (1, 0): cell(1, 0, [0], ["down"]),
        (0, 1): cell(0, 1, [1], ["same"]),
        (1, 1): cell(1, 1, [1], ["same"]),
        (0, 2): cell(0, 2, [2], ["up"]),
    }
    kept = dc.bfs_topology(cells, (0, 2))
    ok = not bad and kept == [(1, 0), (1, 1), (0, 2)]
    report(4, ok, f"{len(beta_cases) + len(delta_cases)} threshold fixtures, mismatches {bad}; BFS kept {kept}")


# 5. structure invariants -------------------------------------------------------------


@pytest.mark.criterion(5, "IB inverse, pixel-shuffle inverse, slimmable aliasing")
def test_criterion_5_structure_invariants():
    rng = np.random.default_rng(51)
    ib_err = 0.0
    for _ in range(20):
        c = int(rng.choice([4, 8, 16]))
        op = zoo.make_operator("IB", c, c, rng)
        x = Tensor(rng.normal(scale=3.0, size=(2, c, 6, 6)))
        with no_grad():
            ib_err = max(ib_err, float(np.max(np.abs(zoo.invert_ib(op, op(x)).data - x.data))))

    ps_exact = True
    for r in (1, 2, 3):
        x = rng.normal(size=(2, 4 * r * r, 5, 7))
        y = F.pixel_shuffle(Tensor(x), r).data
        n, c, h, w = y.shape
        back = y.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape)
        ps_exact &= np.array_equal(back, x)

    k = zoo.SlimmableKernel(8, 8, 3, rng)
    full = k.weight.data.copy()
    xs = Tensor(rng.normal(size=(2, 4, 5, 5)))
    backward(F.l2(k.conv(xs, n_out=4)))
    k.weight.data -= 0.1 * k.weight.grad
    changed = np.argwhere(np.any(k.weight.data != full, axis=(2, 3)))
    alias = bool(changed.size) and changed[:, 0].max() < 4 and changed[:, 1].max() < 4
    w_view, _ = k.sliced(4, 4)
    alias &= np.array_equal(w_view.data, k.weight.data[:4, :4])
    report(5, ib_err <= 1e-10 and ps_exact and alias, f"IB roundtrip max err {ib_err:.1e}; pixel_shuffle inverse exact {ps_exact}; slice aliasing {alias}")


# 7. search-space size ------------------------------------------------------------------


@pytest.mark.criterion(7, "search-space size estimate")
def test_criterion_7_space_size():
    per_cell = sn.cell_log10(7, 8, 5)
    exact = 63 * 8 * math.log10(5)  # log10((5^8)^63)
    paper = sn.estimate_space_size(sn.PartSpec(rows=3, cells_per_row=4, base_width=16), parts=3)
    ok = abs(per_cell - exact) < 1e-12 and round(per_cell) == 352 and abs(paper - 1800) <= 180
    report(7, ok, f"(5^8)^63 -> 10^{per_cell:.2f}; 3-part 3x4 spec -> 10^{paper:.1f}")


# shared desk runs -----------------------------------------------------------------------

SEEDS = (0, 1, 2)


def _awgn25(report):
    return {r["case"]: r for r in report["cases"]}["awgn25"]


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    """Searched and random-baseline models for each seed at the desk configuration."""
    from denas import pipeline as P
    from denas.config import RunConfig

    runs = {}
    with precision(np.float64):
        for seed in SEEDS:
            cfg = RunConfig(overrides=[f"seed={seed}"])
            out = tmp_path_factory.mktemp(f"desk{seed}")
            t0 = time.perf_counter()
            res = P.run_pipeline(cfg, out)
            elapsed = time.perf_counter() - t0
            base = dc.random_architecture(P.specs_for(cfg, res["prior"].width), np.random.default_rng([seed, 99]))
            net, _ = P.train_stage(cfg, base, res["dataset"], res["prior"])
            rand = P.eval_stage(cfg, net, res["eval_clean"])
            runs[seed] = {
                "dir": out,
                "elapsed": elapsed,
                "searched": _awgn25(res["report"]),
                "random": _awgn25(rand),
            }
    return runs


# 6. regularizer behaviour --------------------------------------------------------------


def _small_search(seed, lam, table, epochs):
    from denas import pipeline as P
    from denas.config import RunConfig

    cfg = RunConfig(overrides=[f"seed={seed}", "data.count=48", "prior.epochs=4", f"search.epochs={epochs}", f"search.lam={lam}"])
    ds, _ = P.build_dataset(cfg)
    prior, _ = P.prior_stage(cfg, ds)
    archs, _ = P.search_stage(cfg, prior, ds, table if lam else None)
    return dc.decode(archs)


@pytest.fixture(scope="module")
def measured_table():
    from denas.config import RunConfig
    from denas import pipeline as P

    cfg = RunConfig(overrides=["lut.reps=20", "lut.warmups=2"])
    with precision(np.float64):
        return P.lut_stage(cfg)


# costs are in ms; at about 0.1-0.3 ms per operator this makes the cost term dominate L_dp
LAMBDA_LARGE = 10.0


@pytest.mark.criterion(6, "complexity regularizer: rigged skip table and lambda direction")
def test_criterion_6_regularizer(measured_table):
    from denas.regularizers import decoded_cost

    rigged = measured_table.rigged(10.0)
    frac = []
    for seed in range(5):
        aj = _small_search(seed, LAMBDA_LARGE, rigged, epochs=6)
        ops = [c["op"] for p in aj["parts"] for c in p["cells"]]
        frac.append(ops.count("skip") / len(ops))
    costs0, costs1 = [], []
    for seed in range(5):
        costs0.append(decoded_cost(_small_search(seed, 0.0, measured_table, epochs=10), measured_table))
        costs1.append(decoded_cost(_small_search(seed, 1e-3, measured_table, epochs=10), measured_table))
    m0, m1 = 1e3 * np.mean(costs0), 1e3 * np.mean(costs1)
    ok = min(frac) >= 0.9 and m0 > m1
    report(
        6,
        ok,
        f"skip fraction per seed {[round(f, 2) for f in frac]}; mean decoded cost lam=0 {m0:.3f} ms vs lam=1e-3 {m1:.3f} ms",
    )


# 8. end-to-end desk scale --------------------------------------------------------------


@pytest.mark.criterion(8, "desk pipeline: time, gain over noisy, beats random baseline")
def test_criterion_8_end_to_end(desk_runs):
    s = [desk_runs[k]["searched"]["psnr"] for k in SEEDS]
    r = [desk_runs[k]["random"]["psnr"] for k in SEEDS]
    noisy = [desk_runs[k]["searched"]["noisy_psnr"] for k in SEEDS]
    gains = [a - b for a, b in zip(s, noisy)]
    worst_time = max(desk_runs[k]["elapsed"] for k in SEEDS)
    ok = worst_time <= 7200 and min(gains) >= 2.0 and np.median(s) > np.median(r)
    report(
        8,
        ok,
        f"pipeline wall time max {worst_time / 60:.1f} min; gain over noisy {[round(g, 2) for g in gains]} dB; "
        f"median psnr searched {np.median(s):.2f} vs random {np.median(r):.2f}",
    )


# 9. toy concatenation check ------------------------------------------------------------


@pytest.mark.criterion(9, "toy model with concatenation beats the one without")
def test_criterion_9_toy_concat():
    from denas import pipeline as P
    from denas.config import RunConfig
    from denas.train import TrainConfig, evaluate, train_model

    cfg = RunConfig()
    ds, eval_clean = P.build_dataset(cfg)
    noisy, clean = P.train_arrays(ds)
    psnr = {1: [], 2: []}
    for variant in (1, 2):
        for seed in SEEDS:
            model = zoo.ToyModel(variant, rng=np.random.default_rng([seed, variant]))
            tc = TrainConfig(epochs=TOY_EPOCHS, batch=4, lr_max=2e-3, dp_warmup=0, seed=seed)
            train_model(model, noisy, clean, tc)
            psnr[variant].append(evaluate(model, eval_clean, [D.NoiseCase("awgn", 25.0)], seed=seed)[0]["psnr"])
    m1, m2 = np.median(psnr[1]), np.median(psnr[2])
    report(9, m2 > m1, f"median psnr Model-2 {m2:.2f} vs Model-1 {m1:.2f} (per seed {psnr})")


TOY_EPOCHS = 20


# 10. determinism ------------------------------------------------------------------------


@pytest.mark.criterion(10, "rerun reproduces archweights and decoded architecture bytes")
def test_criterion_10_determinism(desk_runs, tmp_path):
    from denas import pipeline as P
    from denas.config import RunConfig
    from denas.prior import PriorModel

    first = desk_runs[0]["dir"]
    cfg = RunConfig(overrides=["seed=0"])
    with precision(np.float64):
        ds, _ = P.build_dataset(cfg)
        prior, _ = P.prior_stage(cfg, ds)
        archs, _ = P.search_stage(cfg, prior, ds, None, tmp_path)
        (tmp_path / "arch.json").write_text(dc.dumps(dc.decode(archs)))
    names = [f"part{i}/archweights.json" for i in range(3)] + ["arch.json"]
    diff = [n for n in names if (first / n).read_bytes() != (tmp_path / n).read_bytes()]
    same_prior = all(
        np.array_equal(a.data, b.data) for a, b in zip(PriorModel.load(first / "prior" / "prior.pkl").parameters(), prior.parameters())
    )
    report(10, not diff and same_prior, f"byte-identical files {len(names) - len(diff)}/{len(names)}; prior weights identical {same_prior}")
