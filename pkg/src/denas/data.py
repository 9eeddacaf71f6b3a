"""Synthetic clean images, noise models, patch pairs and image-quality metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.signal import correlate2d

SIGMA_MIN = 5 / 255
SIGMA_MAX = 50 / 255
AWGN_PRESETS = (15, 25, 50)
PSNR_CAP = 99.0


@dataclass(frozen=True)
class NoiseCase:
    """``kind`` is "awgn" (``sigma`` on the 0-255 scale) or "spatial" (``map_case`` 1..4)."""

    kind: str = "awgn"
    sigma: float = 25.0
    map_case: int = 1
    seed: int = 0
    clip: bool = False

    def __post_init__(self):
        if self.kind not in ("awgn", "spatial"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "awgn" and self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.kind == "spatial" and self.map_case not in (1, 2, 3, 4):
            raise ValueError(f"map case must be 1..4, got {self.map_case}")

    @property
    def label(self):
        return f"awgn{self.sigma:g}" if self.kind == "awgn" else f"case{self.map_case}"


# noise ---------------------------------------------------------------------------

# bump count, bandwidth range (fraction of the image side); case 1 is the training map
_MAP_CASES = {1: (3, (0.15, 0.35)), 2: (1, (0.3, 0.5)), 3: (6, (0.08, 0.2)), 4: (12, (0.05, 0.12))}


def gen_sigma_map(h, w, case, seed=0):
    """Smooth positive noise-level map in ``[5/255, 50/255]`` from a mixture of Gaussian bumps."""
    if case not in _MAP_CASES:
        raise ValueError(f"map case must be 1..4, got {case}")
    if h < 8 or w < 8:
        raise ValueError("sigma maps need h, w >= 8")
    n, (bw_lo, bw_hi) = _MAP_CASES[case]
    rng = np.random.default_rng([case, seed])
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    field = np.zeros((h, w))
    side = max(h, w)
    for _ in range(n):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        bw = rng.uniform(bw_lo, bw_hi) * side
        amp = rng.uniform(0.3, 1.0)
        field += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * bw * bw))
    span = field.max() - field.min()
    if span < 1e-12:
        return np.full((h, w), 0.5 * (SIGMA_MIN + SIGMA_MAX))
    unit = (field - field.min()) / span
    return np.clip(SIGMA_MIN + unit * (SIGMA_MAX - SIGMA_MIN), SIGMA_MIN, SIGMA_MAX)


def noise_map(shape, case):
    h, w = shape[-2:]
    if case.kind == "awgn":
        return np.full((h, w), case.sigma / 255.0)
    return gen_sigma_map(h, w, case.map_case, case.seed)


def add_noise(clean, case, rng=None, sigma_map=None):
    """``clean + n1 * M`` with ``n1 ~ N(0, 1)``; unclipped unless the case asks for it."""
    clean = np.asarray(clean, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(case.seed)
    m = noise_map(clean.shape, case) if sigma_map is None else np.asarray(sigma_map)
    noisy = clean + rng.standard_normal(clean.shape) * m
    return np.clip(noisy, 0.0, 1.0) if case.clip else noisy


# metrics -------------------------------------------------------------------------


def psnr(a, b, data_range=1.0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(data_range**2 / mse))


def _gaussian(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, data_range=1.0, k1=0.01, k2=0.03, win=11, sigma=1.5):
    """Mean SSIM over valid windows; channels (leading axis of 3-D input) are averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < win:
        raise ValueError(f"image {a.shape[-2:]} smaller than the {win}x{win} window")
    g = _gaussian(win, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2

    def filt(z):
        return correlate2d(z, g, mode="valid")

    scores = []
    for x, y in zip(a.reshape(-1, *a.shape[-2:]), b.reshape(-1, *b.shape[-2:])):
        mx, my = filt(x), filt(y)
        vx = filt(x * x) - mx * mx
        vy = filt(y * y) - my * my
        cxy = filt(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        scores.append(s.mean())
    return float(np.mean(scores))


# clean sources ---------------------------------------------------------------------


def procedural_image(size, rng):
    """RGB texture in [0, 1]: a colour gradient, soft blobs and a rotated checkerboard."""
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / float(size)
    img = np.zeros((3, h, w))
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    theta = rng.uniform(0, 2 * np.pi)
    t = (np.cos(theta) * xx + np.sin(theta) * yy)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    img += c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    for _ in range(rng.integers(3, 8)):
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.05, 0.25)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        img += rng.uniform(-0.6, 0.6, 3)[:, None, None] * blob
    period = rng.uniform(0.06, 0.25)
    phi = rng.uniform(0, np.pi)
    u = np.cos(phi) * xx + np.sin(phi) * yy
    v = -np.sin(phi) * xx + np.cos(phi) * yy
    checker = (np.floor(u / period) + np.floor(v / period)) % 2
    mask = rng.uniform(0.15, 0.45)
    img += mask * (checker - 0.5) * rng.uniform(0.3, 1.0, 3)[:, None, None]
    return np.clip(img, 0.0, 1.0)


def procedural_corpus(n, size, seed):
    rng = np.random.default_rng([seed, 7919])
    return [procedural_image(size, rng) for _ in range(n)]


def load_image(path):
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def save_image(path, img):
    from PIL import Image

    arr = np.clip(np.round(np.asarray(img).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_folder(folder):
    paths = sorted(p for p in Path(folder).iterdir() if p.suffix.lower() in (".png", ".ppm", ".bmp", ".jpg"))
    if not paths:
        raise ValueError(f"no images found in {folder}")
    return [str(p) for p in paths], [load_image(p) for p in paths]


# datasets ----------------------------------------------------------------------------


@dataclass
class DatasetSplit:
    noisy_w: np.ndarray
    clean_w: np.ndarray
    noisy_arch: np.ndarray
    clean_arch: np.ndarray
    manifest: list
    seed: int

    def ids(self, split):
        return [m["id"] for m in self.manifest if m["split"] == split]


def make_pairs(sources, patch, count, case, seed, names=None):
    """Deterministic random crops with per-pair noise; returns (noisy, clean, manifest)."""
    if not sources:
        raise ValueError("no source images")
    names = names or [f"procedural:{i}" for i in range(len(sources))]
    for s in sources:
        if min(s.shape[-2:]) < patch:
            raise ValueError(f"source of size {s.shape[-2:]} is smaller than patch {patch}")
    rng = np.random.default_rng([seed, 104729])
    clean = np.empty((count, 3, patch, patch))
    noisy = np.empty_like(clean)
    manifest = []
    for k in range(count):
        si = int(rng.integers(len(sources)))
        src = sources[si]
        y = int(rng.integers(src.shape[1] - patch + 1))
        x = int(rng.integers(src.shape[2] - patch + 1))
        clean[k] = src[:, y : y + patch, x : x + patch]
        pair_seed = int(rng.integers(2**31))
        pair_case = NoiseCase(case.kind, case.sigma, case.map_case, pair_seed, case.clip)
        noisy[k] = add_noise(clean[k], pair_case, np.random.default_rng(pair_seed))
        manifest.append(
            {"id": k, "source": names[si], "crop": [y, x, patch], "case": asdict(pair_case), "seed": pair_seed}
        )
    return noisy, clean, manifest


def make_dataset(sources, patch, count, split_ratio, case, seed, names=None):
    """Crop ``count`` pairs and split them into disjoint w / architecture halves."""
    if not 0.0 < split_ratio < 1.0:
        raise ValueError("split ratio must lie in (0, 1)")
    noisy, clean, manifest = make_pairs(sources, patch, count, case, seed, names)
    n_w = int(round(split_ratio * count))
    if n_w == 0 or n_w == count:
        raise ValueError(f"split of {count} pairs at {split_ratio} leaves an empty side")
    order = np.random.default_rng([seed, 1299709]).permutation(count)
    w_idx, a_idx = np.sort(order[:n_w]), np.sort(order[n_w:])
    for i in w_idx:
        manifest[i]["split"] = "w"
    for i in a_idx:
        manifest[i]["split"] = "arch"
    return DatasetSplit(noisy[w_idx], clean[w_idx], noisy[a_idx], clean[a_idx], manifest, seed)


def write_manifest(path, manifest):
    Path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True))


def regenerate(manifest, sources_by_name):
    """Rebuild (noisy, clean) pairs from manifest entries."""
    noisy, clean = [], []
    for m in manifest:
        y, x, p = m["crop"]
        c = sources_by_name[m["source"]][:, y : y + p, x : x + p]
        case = NoiseCase(**m["case"])
        clean.append(c)
        noisy.append(add_noise(c, case, np.random.default_rng(m["seed"])))
    return np.stack(noisy), np.stack(clean)
