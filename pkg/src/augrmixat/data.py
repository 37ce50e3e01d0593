"""Synthetic shape-classification data: a desk-scale stand-in for natural image benchmarks."""
from __future__ import annotations

import numpy as np

from .numerics import Rng

SHAPES = ("disc", "bar", "cross", "ring", "square", "diagonal")


def _shape_mask(kind, size, cy, cx, scale, orient):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    half = scale * size / 2
    if kind == "disc":
        return np.hypot(dy, dx) <= 0.6 * half
    if kind == "ring":
        r = np.hypot(dy, dx)
        return (r <= 0.8 * half) & (r >= 0.5 * half)
    if kind == "square":
        return (np.abs(dy) <= 0.55 * half) & (np.abs(dx) <= 0.55 * half)
    thick = max(0.75, 0.12 * size)
    if kind == "bar":
        along, across = (dx, dy) if orient else (dy, dx)
        return (np.abs(across) <= thick) & (np.abs(along) <= half)
    if kind == "cross":
        return ((np.abs(dy) <= thick) & (np.abs(dx) <= 0.8 * half)) | \
               ((np.abs(dx) <= thick) & (np.abs(dy) <= 0.8 * half))
    if kind == "diagonal":
        d = (dy - dx) if orient else (dy + dx)
        return (np.abs(d) <= 1.2 * thick) & (np.abs(dy) <= 0.8 * half) & (np.abs(dx) <= 0.8 * half)
    raise ValueError(f"unknown shape {kind!r}")


def class_textures(num_classes, size, channels=1, seed=12345):
    """Fixed +-1 checker-block patterns, one per class (2x2-pixel blocks)."""
    rng = Rng(seed)
    blocks = rng.integers(0, 2, (num_classes, channels, (size + 1) // 2, (size + 1) // 2)) * 2.0 - 1.0
    return np.repeat(np.repeat(blocks, 2, axis=2), 2, axis=3)[:, :, :size, :size]


def make_shapes(n, num_classes=3, size=16, channels=1, seed=0, noise=0.05, contrast=(0.35, 0.6),
                background=(0.15, 0.35), texture=0.0, shape_flip=0.0):
    """Class-balanced ``(images [n, C, size, size] float32 in [0, 1], labels [n] int64)``.

    Each class is a shape (disc, bar, cross, ...) drawn with random position,
    scale, background level and additive pixel noise.

    Two optional knobs model the robust/non-robust feature split seen on
    natural images:

    * ``shape_flip``: probability that an image shows the shape of a random
      *other* class, capping shape-only accuracy at ``1 - shape_flip``;
    * ``texture``: amplitude of a faint class-specific checker pattern that is
      always label-consistent.  Kept below the attack budget it is predictive
      but not robust.
    """
    if num_classes < 2 or num_classes > len(SHAPES):
        raise ValueError(f"num_classes must be in 2..{len(SHAPES)}, got {num_classes}")
    if n < num_classes:
        raise ValueError(f"need at least one sample per class: n={n} < classes={num_classes}")
    if size < 8:
        raise ValueError(f"image size must be >= 8, got {size}")
    rng = Rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes)
    patterns = class_textures(num_classes, size, channels)
    images = np.empty((n, channels, size, size), dtype=np.float32)
    jitter = size / 8
    for i, y in enumerate(labels):
        r = rng.child(i)
        shape_class = y
        if shape_flip and r.uniform() < shape_flip:
            shape_class = (y + 1 + r.integers(num_classes - 1)) % num_classes
        cy = (size - 1) / 2 + r.uniform(-jitter, jitter)
        cx = (size - 1) / 2 + r.uniform(-jitter, jitter)
        mask = _shape_mask(SHAPES[shape_class], size, cy, cx, r.uniform(0.6, 0.9), r.uniform() < 0.5)
        level = r.uniform(*background)
        amp = r.uniform(*contrast)
        tint = 1.0 + 0.2 * r.uniform(-1, 1, channels)
        img = level + amp * mask[None] * tint[:, None, None] + noise * r.normal((channels, size, size))
        if texture:
            img = img + texture * patterns[y]
        images[i] = np.clip(img, 0.0, 1.0)
    return images, labels.astype(np.int64)
