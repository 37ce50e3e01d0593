"""Generated corruption suite, partial occlusion, and the robustness metrics built on them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .numerics import Rng
from .validation import check_images

SEVERITY_PARAMS = {
    "gaussian_noise": (0.04, 0.06, 0.08, 0.09, 0.10),
    "shot_noise": (500, 250, 100, 75, 50),
    "impulse_noise": (0.01, 0.02, 0.03, 0.05, 0.07),
    "speckle_noise": (0.06, 0.10, 0.12, 0.16, 0.20),
    "brightness": (0.05, 0.10, 0.15, 0.20, 0.30),
    "contrast": (0.75, 0.50, 0.40, 0.30, 0.15),
    "pixelate": (2, 3, 4, 5, 6),
    "defocus_blur": (1, 2, 3, 4, 6),
}
CORRUPTIONS = tuple(SEVERITY_PARAMS)
SEVERITIES = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in SEVERITY_PARAMS:
            raise ValueError(f"unknown corruption {self.kind!r}; valid kinds: {', '.join(CORRUPTIONS)}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"severity must be in 1..5, got {self.severity}")

    @property
    def param(self):
        return SEVERITY_PARAMS[self.kind][self.severity - 1]


def pixelate(img, d):
    """Box-average ``d x d`` blocks (edge blocks may be partial), then nearest upsample."""
    c, h, w = img.shape
    rows, cols = np.arange(h) // d, np.arange(w) // d
    nr, nc = rows[-1] + 1, cols[-1] + 1
    sums = np.zeros((c, nr, nc))
    np.add.at(sums, (slice(None), rows[:, None], cols[None, :]), img.astype(np.float64))
    counts = np.bincount(rows)[:, None] * np.bincount(cols)[None, :]
    return (sums / counts)[:, rows[:, None], cols[None, :]].astype(img.dtype)


def disk_kernel(radius):
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    k = (xx ** 2 + yy ** 2 <= r ** 2).astype(np.float64)
    return k / k.sum()


def corrupt(img, spec: CorruptionSpec, rng: Rng):
    img = np.asarray(img)
    x = img.astype(np.float64)
    p = spec.param
    kind = spec.kind
    if kind == "gaussian_noise":
        out = x + p * rng.normal(x.shape)
    elif kind == "shot_noise":
        out = rng.poisson(np.clip(x, 0, 1) * p) / p
    elif kind == "impulse_noise":
        u = rng.uniform(size=x.shape)
        out = np.where(u < p / 2, 0.0, np.where(u < p, 1.0, x))
    elif kind == "speckle_noise":
        out = x * (1.0 + p * rng.normal(x.shape))
    elif kind == "brightness":
        out = x + p
    elif kind == "contrast":
        mean = x.mean(axis=(1, 2), keepdims=True)
        out = (x - mean) * p + mean
    elif kind == "pixelate":
        out = pixelate(x, p)
    else:
        k = disk_kernel(p)
        out = np.stack([ndimage.convolve(ch, k, mode="reflect") for ch in x])
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def corrupt_batch(X, spec: CorruptionSpec, rng: Rng):
    X = np.asarray(X)
    return np.stack([corrupt(X[i], spec, rng.child(i)) for i in range(len(X))]) if len(X) else X.copy()


@dataclass(frozen=True)
class OcclusionSpec:
    mode: str = "untargeted"
    block_frac: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("untargeted", "targeted"):
            raise ValueError(f"occlusion mode must be 'untargeted' or 'targeted', got {self.mode!r}")
        if not 0 < self.block_frac < 1:
            raise ValueError(f"block_frac must be in (0, 1), got {self.block_frac}")


def occlusion_box(H, W, block_frac, rng: Rng):
    bh, bw = max(1, round(block_frac * H)), max(1, round(block_frac * W))
    top, left = int(rng.integers(H - bh + 1)), int(rng.integers(W - bw + 1))
    return top, left, bh, bw


def occlude(img, spec: OcclusionSpec, rng: Rng, pool=None, pool_labels=None, label=None):
    """Zero a block (untargeted) or paste the same block from another-class pool image (targeted)."""
    img = np.asarray(img)
    top, left, bh, bw = occlusion_box(img.shape[1], img.shape[2], spec.block_frac, rng)
    out = img.copy()
    if spec.mode == "untargeted":
        out[:, top:top + bh, left:left + bw] = 0
        return out
    if pool is None or len(pool) == 0:
        raise ValueError("targeted occlusion needs a pool of images from other classes")
    candidates = np.arange(len(pool))
    if pool_labels is not None and label is not None:
        candidates = candidates[np.asarray(pool_labels) != label]
        if candidates.size == 0:
            raise ValueError(f"pool has no image outside class {label}")
    src = pool[int(rng.choice(candidates))]
    out[:, top:top + bh, left:left + bw] = src[:, top:top + bh, left:left + bw]
    return out


def occlude_batch(X, spec: OcclusionSpec, rng: Rng, labels=None, pool=None, pool_labels=None):
    """Occlude every image; targeted mode defaults the pool to the batch itself."""
    X = np.asarray(X)
    if spec.mode == "targeted" and pool is None:
        pool, pool_labels = X, labels
    out = np.empty_like(X)
    for i in range(len(X)):
        out[i] = occlude(X[i], spec, rng.child(i), pool, pool_labels,
                         None if labels is None else labels[i])
    return out


def top_k_accuracy(logits, labels, k=1) -> float:
    """Fraction of rows whose label ranks in the top ``k``; ties go to the lower class index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > logits.shape[1]:
        raise ValueError(f"k={k} exceeds the number of classes {logits.shape[1]}")
    if len(labels) == 0:
        return 0.0
    true = logits[np.arange(len(labels)), labels][:, None]
    lower_index = np.arange(logits.shape[1])[None, :] < labels[:, None]
    rank = (logits > true).sum(axis=1) + ((logits == true) & lower_index).sum(axis=1)
    return float(np.mean(rank < k))


def corruption_error_from(errors_by_severity) -> float:
    missing = [s for s in SEVERITIES if s not in errors_by_severity]
    if missing:
        raise ValueError(f"missing severities {missing}")
    return float(np.mean([errors_by_severity[s] for s in SEVERITIES]))


def corruption_error(predict_logits, X, labels, kind, rng: Rng) -> float:
    """Top-1 error averaged over the five severities of ``kind`` (unnormalised CE)."""
    errors = {}
    for s in SEVERITIES:
        Xc = corrupt_batch(X, CorruptionSpec(kind, s), rng.child(s))
        errors[s] = 1.0 - top_k_accuracy(predict_logits(Xc), labels, 1)
    return corruption_error_from(errors)


def mce(per_kind_errors) -> float:
    values = list(per_kind_errors.values()) if isinstance(per_kind_errors, dict) else list(per_kind_errors)
    if not values:
        raise ValueError("no corruption errors to average")
    return float(np.mean(values))


def mca(per_kind_errors) -> float:
    return 1.0 - mce(per_kind_errors)


def corruption_report(predict_logits, X, labels, rng: Rng, kinds=CORRUPTIONS) -> dict:
    ce = {kind: corruption_error(predict_logits, X, labels, kind, rng.child(i)) for i, kind in enumerate(kinds)}
    return {"ce": ce, "mce": mce(ce), "mca": mca(ce)}


def occlusion_report(predict_logits, X, labels, rng: Rng, block_frac=0.4) -> dict:
    """Top-1 under zero-filled blocks, Top-2 under pasted other-class blocks, and their mean."""
    un = occlude_batch(X, OcclusionSpec("untargeted", block_frac), rng.child(0))
    tg = occlude_batch(X, OcclusionSpec("targeted", block_frac), rng.child(1), labels=labels)
    top1 = top_k_accuracy(predict_logits(un), labels, 1)
    top2 = top_k_accuracy(predict_logits(tg), labels, 2)
    return {"untargeted_top1": top1, "targeted_top2": top2, "mean": 0.5 * (top1 + top2),
            "block_frac": block_frac}


class Corruption(TransformerMixin, BaseEstimator):
    """Apply one corruption at one severity to a batch of images."""

    def __init__(self, kind="gaussian_noise", severity=1, random_state=0):
        self.kind = kind
        self.severity = severity
        self.random_state = random_state

    def fit(self, X, y=None):
        check_images(X)
        self.spec_ = CorruptionSpec(self.kind, self.severity)
        return self

    def transform(self, X):
        spec = getattr(self, "spec_", None) or CorruptionSpec(self.kind, self.severity)
        return corrupt_batch(check_images(X), spec, Rng(self.random_state))


class Occlusion(TransformerMixin, BaseEstimator):
    """Untargeted occlusion; targeted occlusion needs labels, so use :func:`occlude_batch` for it."""

    def __init__(self, block_frac=0.4, random_state=0):
        self.block_frac = block_frac
        self.random_state = random_state

    def fit(self, X, y=None):
        check_images(X)
        return self

    def transform(self, X):
        return occlude_batch(check_images(X), OcclusionSpec("untargeted", self.block_frac), Rng(self.random_state))
