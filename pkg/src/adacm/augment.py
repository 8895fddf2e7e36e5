"""Seeded weak and strong augmentations for vectors and small images.

A sample with one axis is treated as a feature vector; two axes (H, W) or
three axes (C, H, W) as an image with values in [0, 1]. Every call takes its
own ``numpy.random.Generator`` so results depend only on (sample, seed).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VIEW_LABELED = 0
VIEW_A = 1
VIEW_B = 2
VIEW_STRONG = 3
VIEW_MARGIN = 4

IMAGE_POOL = ("invert", "contrast", "brightness", "cutout", "translate", "rotate90")
VECTOR_POOL = ("jitter", "dropout", "signflip")

DEFAULT_MAGNITUDES = {
    "contrast": (0.4, 1.6),
    "brightness": (0.4, 1.6),
    "cutout": (0.2, 0.5),
    "translate": (0.1, 0.3),
    "jitter": (0.5, 1.5),
    "dropout": (0.1, 0.3),
    "signflip": (0.05, 0.15),
}


@dataclass(frozen=True)
class AugmentPolicy:
    """Parameters of one augmentation family.

    ``jitter`` is the Gaussian noise scale in units of the per-dimension data
    std (vector path). For strong policies the ``jitter`` pool op multiplies
    this scale by a magnitude drawn from ``magnitudes["jitter"]``.
    """

    kind: str = "weak"
    jitter: float = 0.05
    pad: int = 2
    flip: bool = True
    pool: tuple[str, ...] = ()
    n_ops: int = 2
    magnitudes: dict = field(default_factory=lambda: dict(DEFAULT_MAGNITUDES))

    def __post_init__(self):
        if self.kind not in ("weak", "strong"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        known = set(IMAGE_POOL) | set(VECTOR_POOL)
        for op in self.pool:
            if op not in known:
                raise ValueError(f"unknown augmentation op {op!r}")
        for name, (lo, hi) in self.magnitudes.items():
            if not lo <= hi:
                raise ValueError(f"magnitude range for {name!r} is empty: ({lo}, {hi})")
        if self.jitter < 0 or self.pad < 0 or self.n_ops < 0:
            raise ValueError("jitter, pad and n_ops must be non-negative")


WEAK = AugmentPolicy("weak", jitter=0.05)
STRONG = AugmentPolicy("strong", jitter=0.25, pool=VECTOR_POOL + IMAGE_POOL)


def substream(seed: int, epoch: int, index: int, view: int, draw: int = 0) -> np.random.Generator:
    """Independent generator keyed by (seed, epoch, sample index, view, draw)."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, index, view, draw]))


def _as_float(sample) -> np.ndarray:
    return np.array(sample, dtype=np.float64, copy=True)


def crop_flip(img: np.ndarray, pad: int, offset: tuple[int, int], flip: bool) -> np.ndarray:
    """Zero-pad the spatial axes, crop back to size at ``offset``, optionally mirror."""
    h, w = img.shape[-2:]
    width = [(0, 0)] * (img.ndim - 2) + [(pad, pad), (pad, pad)]
    out = np.pad(img, width)[..., offset[0] : offset[0] + h, offset[1] : offset[1] + w]
    if flip:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def weak_augment(sample, rng: np.random.Generator, policy: AugmentPolicy = WEAK, scale=1.0) -> np.ndarray:
    x = _as_float(sample)
    if x.ndim == 1:
        if policy.jitter > 0:
            x = x + rng.normal(size=x.shape) * (policy.jitter * np.asarray(scale))
        return x
    h, w = x.shape[-2:]
    if h == 1 and w == 1:
        return x
    pad = policy.pad
    offset = (int(rng.integers(0, 2 * pad + 1)), int(rng.integers(0, 2 * pad + 1)))
    flip = policy.flip and rng.random() < 0.5
    return crop_flip(x, pad, offset, flip)


# ---------------------------------------------------------------------------
# strong ops; each takes (x, magnitude-or-None, rng, scale)
# ---------------------------------------------------------------------------


def _cutout_box(shape, frac, rng):
    h, w = shape[-2:]
    ch, cw = max(1, int(round(frac * h))), max(1, int(round(frac * w)))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return top, left, ch, cw


def _op_cutout(x, m, rng, scale):
    top, left, ch, cw = _cutout_box(x.shape, m, rng)
    x[..., top : top + ch, left : left + cw] = 0.0
    return x


def _op_invert(x, m, rng, scale):
    return 1.0 - x


def _op_contrast(x, m, rng, scale):
    mu = x.mean()
    return np.clip(mu + m * (x - mu), 0.0, 1.0)


def _op_brightness(x, m, rng, scale):
    return np.clip(x * m, 0.0, 1.0)


def _op_translate(x, m, rng, scale):
    h, w = x.shape[-2:]
    dy = int(round(rng.uniform(-m, m) * h))
    dx = int(round(rng.uniform(-m, m) * w))
    out = np.zeros_like(x)
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[..., yd, xd] = x[..., ys, xs]
    return out


def _op_rotate90(x, m, rng, scale):
    h, w = x.shape[-2:]
    k = int(rng.integers(1, 4)) if h == w else 2
    return np.ascontiguousarray(np.rot90(x, k=k, axes=(-2, -1)))


def _op_jitter(x, m, rng, scale, base=0.25):
    return x + rng.normal(size=x.shape) * (base * m * np.asarray(scale))


def _op_dropout(x, m, rng, scale):
    return np.where(rng.random(x.shape) < m, 0.0, x)


def _op_signflip(x, m, rng, scale):
    return np.where(rng.random(x.shape) < m, -x, x)


_OPS = {
    "cutout": _op_cutout,
    "invert": _op_invert,
    "contrast": _op_contrast,
    "brightness": _op_brightness,
    "translate": _op_translate,
    "rotate90": _op_rotate90,
    "jitter": _op_jitter,
    "dropout": _op_dropout,
    "signflip": _op_signflip,
}


def strong_augment(sample, rng: np.random.Generator, policy: AugmentPolicy = STRONG, scale=1.0) -> np.ndarray:
    """Apply ``policy.n_ops`` ops drawn (without replacement) from the applicable pool."""
    x = _as_float(sample)
    pool = VECTOR_POOL if x.ndim == 1 else IMAGE_POOL
    ops = [op for op in policy.pool if op in pool]
    if not ops or policy.n_ops == 0:
        return x
    chosen = rng.choice(len(ops), size=min(policy.n_ops, len(ops)), replace=False)
    for k in chosen:
        name = ops[int(k)]
        lo, hi = policy.magnitudes.get(name, (0.0, 0.0))
        m = rng.uniform(lo, hi)
        if name == "jitter":
            x = _op_jitter(x, m, rng, scale, base=policy.jitter)
        else:
            x = _OPS[name](x, m, rng, scale)
    return x


class Augmenter:
    """Batch front-end: one substream per (epoch, sample index, view, draw)."""

    def __init__(self, seed: int, weak: AugmentPolicy = WEAK, strong: AugmentPolicy = STRONG, scale=1.0):
        self.seed = int(seed)
        self.weak = weak
        self.strong = strong
        self.scale = scale

    def weak_batch(self, x: np.ndarray, ids, epoch: int, view: int, draw=0) -> np.ndarray:
        """``draw`` may be a scalar or one value per sample."""
        if not len(x):
            return np.asarray(x, dtype=np.float64)
        draws = np.broadcast_to(draw, (len(ids),))
        return np.stack([
            weak_augment(xi, substream(self.seed, epoch, int(i), view, int(d)), self.weak, self.scale)
            for xi, i, d in zip(x, ids, draws)
        ])

    def strong_batch(self, x: np.ndarray, ids, epoch: int, view: int = VIEW_STRONG, draw: int = 0) -> np.ndarray:
        return np.stack([
            strong_augment(xi, substream(self.seed, epoch, int(i), view, draw), self.strong, self.scale)
            for xi, i in zip(x, ids)
        ]) if len(x) else np.asarray(x, dtype=np.float64)
