"""Mixed-sample augmentation (Mixup, CutMix, ResizeMix, FMix) with one shared plan per batch.

A :class:`MixPlan` fixes the method, permutation, label weight and spatial
layout once; applying it to the clean, augmented and adversarial views gives
all three the same mixing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, sample_beta
from .validation import check_soft_labels

METHODS = ("mixup", "cutmix", "resizemix", "fmix")
MASK_METHODS = ("cutmix", "fmix")
FMIX_DECAY = 3.0
RESIZEMIX_SCALE = (0.1, 0.8)


@dataclass
class MixPlan:
    method: str
    gamma: float
    perm: np.ndarray
    height: int
    width: int
    mask: np.ndarray | None = None   # bool [H, W], True keeps the un-permuted sample
    patch: tuple | None = None       # resizemix (scale, (top, left, h, w))

    @property
    def batch(self) -> int:
        return len(self.perm)


def fmix_mask(H, W, gamma_target, decay=FMIX_DECAY, rng: Rng | None = None):
    """Binary low-frequency mask with exactly ``round(gamma_target * H * W)`` ones.

    The field is a sum of random-phase sinusoids over the lowest
    ``ceil(H/4) x ceil(W/4)`` frequencies (both horizontal orientations),
    each with Gaussian amplitude scaled by ``(1 + |f|) ** -decay``.
    """
    if H < 4 or W < 4:
        raise ValueError(f"fmix masks need H, W >= 4, got {H}x{W}")
    rng = rng or Rng(0)
    fh, fw = math.ceil(H / 4), math.ceil(W / 4)
    ys = np.arange(H)[:, None] / H
    xs = np.arange(W)[None, :] / W
    field = np.zeros((H, W))
    for fy in range(fh):
        for fx in range(-fw + 1, fw):
            if fy == 0 and fx <= 0:
                continue
            amp = rng.normal() * (1.0 + math.hypot(fy, fx)) ** -decay
            phase = rng.uniform(0.0, 2 * math.pi)
            field += amp * np.cos(2 * math.pi * (fy * ys + fx * xs) + phase)
    k = int(round(float(np.clip(gamma_target, 0.0, 1.0)) * H * W))
    mask = np.zeros(H * W, dtype=bool)
    mask[np.argsort(-field.ravel(), kind="stable")[:k]] = True
    return mask.reshape(H, W), k / (H * W)


def _cutmix_mask(H, W, lam, rng: Rng):
    ratio = math.sqrt(1.0 - lam)
    ch, cw = int(H * ratio), int(W * ratio)
    cy, cx = int(rng.integers(H)), int(rng.integers(W))
    y0, y1 = max(cy - ch // 2, 0), min(cy + ch // 2, H)
    x0, x1 = max(cx - cw // 2, 0), min(cx + cw // 2, W)
    mask = np.ones((H, W), dtype=bool)
    mask[y0:y1, x0:x1] = False
    return mask


def sample_mix_plan(batch, H, W, rng: Rng, methods=METHODS, gamma=None) -> MixPlan:
    """Draw one plan: method uniform over ``methods``, random permutation, per-method ratio.

    ``gamma`` pins the raw mixing draw (Mixup coefficient, CutMix lambda, FMix
    target, ResizeMix uses it as the patch scale); the stored ``gamma`` is
    always the realised source-A fraction.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ValueError(f"unknown mix methods {bad}; choose from {METHODS}")
    method = rng.choice(tuple(methods))
    perm = rng.permutation(batch)
    if method == "mixup":
        g = sample_beta(rng, 1.0) if gamma is None else float(gamma)
        return MixPlan(method, g, perm, H, W)
    if method == "cutmix":
        lam = sample_beta(rng, 1.0) if gamma is None else float(gamma)
        mask = _cutmix_mask(H, W, lam, rng)
        return MixPlan(method, mask.sum() / (H * W), perm, H, W, mask=mask)
    if method == "fmix":
        target = sample_beta(rng, 1.0) if gamma is None else float(gamma)
        mask, g = fmix_mask(H, W, target, FMIX_DECAY, rng)
        return MixPlan(method, g, perm, H, W, mask=mask)
    scale = rng.uniform(*RESIZEMIX_SCALE) if gamma is None else float(gamma)
    ph, pw = max(1, int(round(scale * H))), max(1, int(round(scale * W)))
    top, left = int(rng.integers(H - ph + 1)), int(rng.integers(W - pw + 1))
    return MixPlan(method, 1.0 - (ph * pw) / (H * W), perm, H, W, patch=(scale, (top, left, ph, pw)))


def resize_bilinear(X, out_h, out_w):
    """Bilinear resize of ``[..., H, W]`` with half-pixel centres (no corner alignment)."""
    h, w = X.shape[-2:]

    def coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = coords(out_h, h)
    x0, x1, fx = coords(out_w, w)
    top = X[..., y0, :] * (1 - fy)[:, None] + X[..., y1, :] * fy[:, None]
    return (top[..., x0] * (1 - fx) + top[..., x1] * fx).astype(X.dtype, copy=False)


def apply_mix_plan(X, plan: MixPlan):
    X = np.asarray(X)
    if X.ndim != 4 or X.shape[0] != plan.batch or X.shape[2:] != (plan.height, plan.width):
        raise ValueError(f"plan was drawn for [{plan.batch}, C, {plan.height}, {plan.width}], "
                         f"got {list(X.shape)}")
    other = X[plan.perm]
    if plan.method == "mixup":
        return (plan.gamma * X + (1.0 - plan.gamma) * other).astype(X.dtype, copy=False)
    if plan.method in MASK_METHODS:
        return np.where(plan.mask, X, other)
    _, (top, left, ph, pw) = plan.patch
    out = X.copy()
    out[:, :, top:top + ph, left:left + pw] = resize_bilinear(other, ph, pw)
    return out


def mix_labels(Y, plan: MixPlan):
    Y = check_soft_labels(Y, plan.batch)
    return plan.gamma * Y + (1.0 - plan.gamma) * Y[plan.perm]


def rmix(X, Xbar, Xhat, Y, rng: Rng, methods=METHODS, gamma=None):
    """Mix the three views with one shared plan and mix the labels once."""
    X, Xbar, Xhat = (np.asarray(a) for a in (X, Xbar, Xhat))
    if not X.shape == Xbar.shape == Xhat.shape:
        raise ValueError(f"views differ in shape: {X.shape}, {Xbar.shape}, {Xhat.shape}")
    if X.ndim != 4:
        raise ValueError(f"expected [N, C, H, W] views, got {X.shape}")
    plan = sample_mix_plan(X.shape[0], X.shape[2], X.shape[3], rng, methods, gamma)
    return (apply_mix_plan(X, plan), apply_mix_plan(Xbar, plan), apply_mix_plan(Xhat, plan),
            mix_labels(Y, plan), plan)
