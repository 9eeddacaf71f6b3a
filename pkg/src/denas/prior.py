"""Fixed three-part residual CNN used as the denoising prior for part-wise search."""

from __future__ import annotations

import pickle

import numpy as np

from . import data as D
from .autodiff import Module, Tensor, backward, no_grad
from .autodiff import functional as F
from .ops import SlimmableKernel
from .optim import Adam


class PriorPart(Module):
    def __init__(self, c_in, c_out, width, depth, rng, final_act=True, residual=False, last_gain=1.0):
        chans = [c_in] + [width] * (depth - 1) + [c_out]
        gains = [1.0] * (depth - 1) + [last_gain]
        self.convs = [SlimmableKernel(b, a, 3, rng, gain=g) for a, b, g in zip(chans, chans[1:], gains)]
        self.final_act = final_act
        self.residual = residual and c_in == c_out

    def forward(self, x):
        h = x
        for i, k in enumerate(self.convs):
            h = k.conv(h)
            if i < len(self.convs) - 1 or self.final_act:
                h = F.leaky_relu(h)
        return F.add(x, h) if self.residual else h


class PriorModel(Module):
    """Omega_0: image -> features, Omega_1: features -> features, Omega_2: features -> residual."""

    def __init__(self, channels=3, width=16, depth=2, seed=0, residual=True):
        rng = np.random.default_rng(seed)
        self.channels, self.width, self.depth, self.seed = channels, width, depth, seed
        self.global_residual = residual
        self.parts = [
            PriorPart(channels, width, width, depth, rng),
            PriorPart(width, width, width, depth + 1, rng, residual=True),
            PriorPart(width, channels, width, depth, rng, final_act=False, last_gain=0.1 if residual else 1.0),
        ]

    def part(self, i, x):
        return self.parts[i](x)

    def features(self, x):
        """``[x, Omega_0(x), Omega_1(Omega_0(x)), Omega_2(...)]``."""
        feats = [x]
        for p in self.parts:
            feats.append(p(feats[-1]))
        return feats

    def forward(self, x):
        out = self.features(x)[-1]
        return F.add(x, out) if self.global_residual else out

    def boundary_shapes(self, h, w):
        return [[self.channels, h, w], [self.width, h, w], [self.width, h, w], [self.channels, h, w]]

    def config(self):
        return {
            "channels": self.channels,
            "width": self.width,
            "depth": self.depth,
            "seed": self.seed,
            "residual": self.global_residual,
        }

    def save(self, path, extra=None):
        with open(path, "wb") as fh:
            pickle.dump({"config": self.config(), "state": self.state_dict(), "extra": extra or {}}, fh)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = pickle.load(fh)
        m = cls(**blob["config"])
        m.load_state_dict(blob["state"])
        return m


def part_targets(prior, noisy, batch=32):
    """Part inputs and outputs of the frozen prior: ``[(in_i, out_i) for i in 0..2]``."""
    feats = [[] for _ in range(4)]
    with no_grad():
        for s in range(0, len(noisy), batch):
            fs = prior.features(Tensor(noisy[s : s + batch]))
            for k, f in enumerate(fs):
                feats[k].append(f.data)
    feats = [np.concatenate(f) for f in feats]
    return [(feats[i], feats[i + 1]) for i in range(3)]


def denoise(model, noisy, batch=32):
    outs = []
    with no_grad():
        for s in range(0, len(noisy), batch):
            outs.append(model(Tensor(noisy[s : s + batch])).data)
    return np.concatenate(outs)


def mean_psnr(pred, clean):
    return float(np.mean([D.psnr(p, c) for p, c in zip(pred, clean)]))


def train_prior(prior, noisy, clean, val_noisy, val_clean, epochs=40, lr=1e-3, batch=16, patience=6, seed=0, log=None):
    """Adam on L1 until validation PSNR stops improving for ``patience`` epochs."""
    rng = np.random.default_rng(seed)
    opt = Adam(prior.parameters(), lr)
    best, best_state, since = -np.inf, prior.state_dict(), 0
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(noisy))
        losses = []
        for s in range(0, len(order), batch):
            idx = order[s : s + batch]
            loss = F.l1_loss(prior(Tensor(noisy[idx])), Tensor(clean[idx]))
            backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(float(loss.data))
        val = mean_psnr(denoise(prior, val_noisy), val_clean)
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_psnr": val})
        if log:
            log(f"prior epoch {epoch}: loss {np.mean(losses):.5f} val psnr {val:.2f}")
        if val > best + 1e-3:
            best, best_state, since = val, prior.state_dict(), 0
        else:
            since += 1
            if since >= patience:
                break
    prior.load_state_dict(best_state)
    return history
