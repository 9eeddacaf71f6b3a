"""Train a decoded (or any) denoiser from scratch and evaluate it per noise case."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import data as D
from .autodiff import NonFiniteError, Tensor, backward, no_grad
from .autodiff import functional as F
from .optim import Adam, cosine_lr
from .regularizers import prior_loss, use_dp

REPORT_KEYS = ("case", "n", "psnr", "ssim", "noisy_psnr", "noisy_ssim")


@dataclass
class TrainConfig:
    epochs: int = 60
    batch: int = 16
    lr_max: float = 2e-4
    lr_min: float = 1e-6
    dp_warmup: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError("need 0 < lr_min <= lr_max")
        if self.dp_warmup < 0:
            raise ValueError("dp_warmup must be >= 0")

    def lr(self, epoch):
        """Cosine decay reaching ``lr_min`` on the last epoch."""
        return cosine_lr(epoch, self.epochs - 1, self.lr_max, self.lr_min)


def _batch_loss(model, x, clean, feats, dp_on):
    if not dp_on:
        return F.l1_loss(model(x), clean)
    outs = model.part_outputs(x)
    pred = F.add(x, outs[-1]) if model.residual else outs[-1]
    loss = F.l1_loss(pred, clean)
    for o, t in zip(outs, feats):
        if o.shape == t.shape:
            loss = F.add(loss, prior_loss(o, t))
    return loss


def train_model(model, noisy, clean, config, prior_feats=None, log=None):
    """Adam with a cosine schedule on L1, plus part feature matching during the warmup.

    ``prior_feats`` optionally lists the prior's per-part outputs aligned with ``noisy``;
    it is used only by models exposing ``part_outputs``.
    """
    if noisy.shape != clean.shape:
        raise ValueError(f"shape mismatch {noisy.shape} vs {clean.shape}")
    rng = np.random.default_rng([config.seed, 7])
    opt = Adam(model.parameters(), config.lr_max)
    has_parts = prior_feats is not None and hasattr(model, "part_outputs")
    history = []
    for epoch in range(config.epochs):
        opt.lr = config.lr(epoch)
        dp_on = has_parts and use_dp(epoch, config.dp_warmup)
        order = rng.permutation(len(noisy))
        losses = []
        for s in range(0, len(order), config.batch):
            idx = order[s : s + config.batch]
            feats = [Tensor(f[idx]) for f in prior_feats] if dp_on else ()
            loss = _batch_loss(model, Tensor(noisy[idx]), Tensor(clean[idx]), feats, dp_on)
            try:
                backward(loss)
            except NonFiniteError as exc:
                raise RuntimeError(f"training diverged at epoch {epoch} (seed {config.seed}): {exc}") from exc
            opt.step()
            opt.zero_grad()
            losses.append(float(loss.data))
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "lr": opt.lr, "use_dp": bool(dp_on)}
        history.append(row)
        if log:
            log(f"train epoch {epoch}: loss {row['loss']:.5f} lr {opt.lr:.3g} dp {dp_on}")
    return history


def predict(model, noisy, batch=32):
    outs = []
    with no_grad():
        for s in range(0, len(noisy), batch):
            outs.append(model(Tensor(noisy[s : s + batch])).data)
    return np.concatenate(outs)


def eval_cases(default=(25.0,)):
    """AWGN presets plus the three held-out spatial maps."""
    return [D.NoiseCase("awgn", s) for s in default] + [D.NoiseCase("spatial", map_case=c) for c in (2, 3, 4)]


def evaluate(model, clean, cases, seed=0, batch=32):
    """Mean PSNR / SSIM of the model and of the noisy input, per noise case."""
    rows = []
    for k, case in enumerate(cases):
        noisy = np.stack(
            [D.add_noise(c, D.NoiseCase(case.kind, case.sigma, case.map_case, seed + 1000 * k + i, case.clip)) for i, c in enumerate(clean)]
        )
        pred = predict(model, noisy, batch)
        rows.append(
            {
                "case": case.label,
                "n": len(clean),
                "psnr": float(np.mean([D.psnr(p, c) for p, c in zip(pred, clean)])),
                "ssim": float(np.mean([D.ssim(p, c) for p, c in zip(pred, clean)])),
                "noisy_psnr": float(np.mean([D.psnr(p, c) for p, c in zip(noisy, clean)])),
                "noisy_ssim": float(np.mean([D.ssim(p, c) for p, c in zip(noisy, clean)])),
            }
        )
    return rows


def make_report(rows, config, extra=None):
    return {"config": asdict(config), "cases": rows, **(extra or {})}


def validate_report(report):
    """Raise ``ValueError`` unless ``report`` has the evaluation-report layout."""
    if not isinstance(report, dict) or not isinstance(report.get("cases"), list) or not report["cases"]:
        raise ValueError("report needs a non-empty 'cases' list")
    if not isinstance(report.get("config"), dict):
        raise ValueError("report needs a 'config' object")
    for row in report["cases"]:
        if set(row) != set(REPORT_KEYS):
            raise ValueError(f"case row keys {sorted(row)} != {sorted(REPORT_KEYS)}")
        if not isinstance(row["case"], str) or not isinstance(row["n"], int) or row["n"] < 1:
            raise ValueError("case must be a string and n a positive int")
        for k in REPORT_KEYS[2:]:
            if not isinstance(row[k], float) or not np.isfinite(row[k]):
                raise ValueError(f"{k} must be a finite float")
        if not (-1.0 <= row["ssim"] <= 1.0 and -1.0 <= row["noisy_ssim"] <= 1.0):
            raise ValueError("ssim outside [-1, 1]")
    return report
