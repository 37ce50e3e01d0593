"""Base image operations and the Augment-And-Mix procedure.

Images are ``[C, H, W]`` float arrays in ``[0, 1]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .numerics import Rng, sample_beta, sample_dirichlet
from .validation import check_images

BASE_OPS = ("autocontrast", "equalize", "rotate", "solarize",
            "shear_x", "shear_y", "translate_x", "translate_y")
# not part of the training set; lets tests and degenerate runs pin chains to a no-op
IDENTITY = "identity"

MAX_ROTATE_DEG = 30.0
MAX_SHEAR = 0.3
MAX_TRANSLATE_FRAC = 1.0 / 3.0


@dataclass
class AugmentConfig:
    alpha: float = 1.0
    num_chains: int = 3
    depth_range: tuple = (1, 3)
    severity: int = 3
    fill_value: float = 0.5
    ops: tuple = field(default=BASE_OPS)

    def __post_init__(self):
        self.depth_range = tuple(int(d) for d in self.depth_range)
        self.ops = tuple(self.ops)
        self.validate()

    def validate(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.num_chains < 1:
            raise ValueError(f"num_chains must be >= 1, got {self.num_chains}")
        lo, hi = self.depth_range
        if not 1 <= lo <= hi:
            raise ValueError(f"depth_range must satisfy 1 <= min <= max, got {self.depth_range}")
        if not 1 <= self.severity <= 10:
            raise ValueError(f"severity must be in 1..10, got {self.severity}")
        unknown = [op for op in self.ops if op not in BASE_OPS + (IDENTITY,)]
        if unknown or not self.ops:
            raise ValueError(f"unknown augmentation ops {unknown}; choose from {BASE_OPS}")


# geometric helpers -----------------------------------------------------------

def _warp(img, inv_matrix, fill):
    """Bilinear warp about the image centre. ``inv_matrix`` maps output (row, col) to input."""
    h, w = img.shape[1:]
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = centre - inv_matrix @ centre
    return _affine(img, inv_matrix, offset, fill)


def _affine(img, matrix, offset, fill):
    """Sample ``img`` at ``matrix @ (row, col) + offset``; outside pixels read as ``fill``."""
    c, h, w = img.shape
    rr, cc = np.mgrid[0:h, 0:w]
    src_r = matrix[0, 0] * rr + matrix[0, 1] * cc + offset[0]
    src_c = matrix[1, 0] * rr + matrix[1, 1] * cc + offset[1]
    # one-pixel fill border so neighbours just outside the image blend towards fill
    padded = np.full((c, h + 2, w + 2), fill, dtype=np.float64)
    padded[:, 1:-1, 1:-1] = img
    src_r = np.clip(src_r + 1.0, 0.0, h + 1.0)
    src_c = np.clip(src_c + 1.0, 0.0, w + 1.0)
    r0 = np.minimum(np.floor(src_r).astype(np.int64), h)
    c0 = np.minimum(np.floor(src_c).astype(np.int64), w)
    fr, fc = src_r - r0, src_c - c0
    top = padded[:, r0, c0] * (1 - fc) + padded[:, r0, c0 + 1] * fc
    bottom = padded[:, r0 + 1, c0] * (1 - fc) + padded[:, r0 + 1, c0 + 1] * fc
    return (top * (1 - fr) + bottom * fr).astype(img.dtype, copy=False)


def rotate(img, degrees, fill=0.5):
    if degrees == 0:
        return img.copy()
    t = math.radians(degrees)
    inv = np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]])
    return _warp(img, inv, fill)


def shear(img, sx=0.0, sy=0.0, fill=0.5):
    if sx == 0 and sy == 0:
        return img.copy()
    # rows = (r, c); shear_x moves columns by sx * row, shear_y moves rows by sy * col
    inv = np.linalg.inv(np.array([[1.0, sy], [sx, 1.0]]))
    return _warp(img, inv, fill)


def translate(img, dx=0.0, dy=0.0, fill=0.5):
    """Shift content right by ``dx`` and down by ``dy`` pixels."""
    if dx == 0 and dy == 0:
        return img.copy()
    return _affine(img, np.eye(2), np.array([-dy, -dx], dtype=float), fill)


def solarize(img, threshold):
    """Invert pixels whose 8-bit level is at least ``threshold * 256``.

    ``threshold=1`` leaves the image untouched, ``threshold=0`` inverts all of it.
    """
    levels = np.rint(np.clip(img, 0, 1) * 255)
    return np.where(levels >= threshold * 256, 1.0 - img, img)


def autocontrast(img):
    lo = img.min(axis=(1, 2), keepdims=True)
    hi = img.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1)
    return np.where(span > 0, (img - lo) / safe, img)


def equalize(img):
    """Per-channel histogram equalisation on 256 bins (PIL's lookup rule)."""
    out = np.empty_like(img)
    for ch in range(img.shape[0]):
        levels = np.rint(np.clip(img[ch], 0, 1) * 255).astype(np.int64)
        hist = np.bincount(levels.ravel(), minlength=256)
        nonzero = hist[hist > 0]
        step = (hist.sum() - nonzero[-1]) // 255
        if step == 0:
            out[ch] = img[ch]
            continue
        lut = np.minimum((np.concatenate([[0], np.cumsum(hist)[:-1]]) + step // 2) // step, 255)
        out[ch] = lut[levels] / 255.0
    return out


def apply_base_op(img, kind, magnitude, rng: Rng, fill_value=0.5):
    """Apply one base op; ``magnitude`` in [0, 1] scales the op's maximum strength.

    Geometric ops draw their direction from ``rng``.
    """
    img = np.asarray(img)
    if kind == IDENTITY:
        return img.copy()
    if kind == "autocontrast":
        return autocontrast(img)
    if kind == "equalize":
        return equalize(img)
    if kind == "solarize":
        return solarize(img, 1.0 - magnitude)
    if kind not in BASE_OPS:
        raise ValueError(f"unknown augmentation op {kind!r}; choose from {BASE_OPS}")
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    if kind == "rotate":
        out = rotate(img, sign * magnitude * MAX_ROTATE_DEG, fill_value)
    elif kind == "shear_x":
        out = shear(img, sx=sign * magnitude * MAX_SHEAR, fill=fill_value)
    elif kind == "shear_y":
        out = shear(img, sy=sign * magnitude * MAX_SHEAR, fill=fill_value)
    elif kind == "translate_x":
        out = translate(img, dx=sign * magnitude * img.shape[2] * MAX_TRANSLATE_FRAC, fill=fill_value)
    else:
        out = translate(img, dy=sign * magnitude * img.shape[1] * MAX_TRANSLATE_FRAC, fill=fill_value)
    return np.clip(out, 0.0, 1.0)


def augment_chain(img, cfg: AugmentConfig, rng: Rng):
    depth = int(rng.integers(cfg.depth_range[0], cfg.depth_range[1] + 1))
    out = img
    for _ in range(depth):
        op = rng.choice(cfg.ops)
        magnitude = rng.uniform(0.0, cfg.severity / 10.0)
        out = apply_base_op(out, op, magnitude, rng, cfg.fill_value)
    return out


def augment_and_mix(img, cfg: AugmentConfig, rng: Rng, *, chain_weights=None, mix_weight=None):
    """``m * img + (1 - m) * sum_i w_i * chain_i(img)`` with Dirichlet ``w`` and Beta ``m``.

    ``chain_weights`` / ``mix_weight`` override the sampled convex weights.
    """
    img = np.asarray(img)
    w = sample_dirichlet(rng, cfg.num_chains, cfg.alpha) if chain_weights is None else np.asarray(chain_weights)
    m = sample_beta(rng, cfg.alpha) if mix_weight is None else float(mix_weight)
    if len(w) != cfg.num_chains:
        raise ValueError(f"{len(w)} chain weights for {cfg.num_chains} chains")
    mixed = np.zeros(img.shape, dtype=np.float64)
    for i in range(cfg.num_chains):
        mixed += w[i] * augment_chain(img, cfg, rng)
    out = m * img + (1.0 - m) * mixed
    return np.clip(out, 0.0, 1.0).astype(img.dtype, copy=False)


def augment_batch(X, cfg: AugmentConfig, rng: Rng):
    """Augment-and-mix every image of ``[N, C, H, W]``, one child stream per item."""
    X = np.asarray(X)
    out = np.empty_like(X)
    for i in range(len(X)):
        out[i] = augment_and_mix(X[i], cfg, rng.child(i))
    return out


class AugmentAndMix(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`augment_batch`.

    Each :meth:`transform` call advances an internal stream seeded by
    ``random_state``, so repeated calls give fresh augmentations.
    """

    def __init__(self, alpha=1.0, num_chains=3, depth_range=(1, 3), severity=3,
                 fill_value=0.5, ops=BASE_OPS, random_state=0):
        self.alpha = alpha
        self.num_chains = num_chains
        self.depth_range = depth_range
        self.severity = severity
        self.fill_value = fill_value
        self.ops = ops
        self.random_state = random_state

    def fit(self, X, y=None):
        check_images(X)
        self.config_ = AugmentConfig(self.alpha, self.num_chains, self.depth_range,
                                     self.severity, self.fill_value, self.ops)
        self._rng = Rng(self.random_state)
        self._calls = 0
        return self

    def transform(self, X):
        if not hasattr(self, "config_"):
            self.fit(X)
        X = check_images(X)
        self._calls += 1
        return augment_batch(X, self.config_, self._rng.child(self._calls))
