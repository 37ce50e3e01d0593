"""Divergences and the composite training objective, each with logit gradients.

Every loss is a batch mean; returned gradients are w.r.t. the logits passed in.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import PROB_FLOOR, log_softmax, softmax


def _check_pair(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _softmax_backward(p, dp):
    """Chain ``dL/dp`` through ``p = softmax(z)``."""
    return p * (dp - (p * dp).sum(axis=1, keepdims=True))


def soft_cross_entropy(logits, soft_labels):
    logits = np.asarray(logits)
    y = np.asarray(soft_labels, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape} vs labels {y.shape}")
    if np.any(y < 0) or not np.allclose(y.sum(axis=1), 1.0, atol=1e-5):
        raise ValueError("label rows must be probability vectors summing to 1")
    n = logits.shape[0]
    loss = -(y * log_softmax(logits)).sum() / n
    return float(loss), (softmax(logits) - y) / n


def cross_entropy(logits, labels):
    """Hard-label CE, ``labels`` integer class ids."""
    logits = np.asarray(logits)
    y = np.zeros_like(logits)
    y[np.arange(len(labels)), labels] = 1
    return soft_cross_entropy(logits, y)


def kl_divergence(p_logits, q_logits):
    """``KL(softmax(p) || softmax(q))`` with ``p`` held constant; returns ``(loss, grad_q)``."""
    p_logits, q_logits = _check_pair(p_logits, q_logits)
    n = p_logits.shape[0]
    p = softmax(p_logits)
    log_p = np.log(np.maximum(p, PROB_FLOOR))
    log_q = log_softmax(q_logits)
    loss = (p * (log_p - log_q)).sum() / n
    return float(max(loss, 0.0)), (softmax(q_logits) - p) / n


def js_from_probs(p, q):
    """JS divergence between probability rows (no gradients); batch mean."""
    p, q = _check_pair(np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64))
    m = 0.5 * (p + q)
    lm = np.log(np.maximum(m, PROB_FLOOR))
    kl_pm = (p * (np.log(np.maximum(p, PROB_FLOOR)) - lm)).sum(axis=1)
    kl_qm = (q * (np.log(np.maximum(q, PROB_FLOOR)) - lm)).sum(axis=1)
    return float(np.mean(0.5 * kl_pm + 0.5 * kl_qm))


def js_divergence(p_logits, q_logits):
    """Two-way Jensen-Shannon divergence; gradients flow into both branches (and through the midpoint)."""
    p_logits, q_logits = _check_pair(p_logits, q_logits)
    n = p_logits.shape[0]
    p, q = softmax(p_logits), softmax(q_logits)
    m = 0.5 * (p + q)
    lp = np.log(np.maximum(p, PROB_FLOOR))
    lq = np.log(np.maximum(q, PROB_FLOOR))
    lm = np.log(np.maximum(m, PROB_FLOOR))
    js = 0.5 * (p * (lp - lm)).sum() + 0.5 * (q * (lq - lm)).sum()
    # d/dp [p log p - 2 m log m] / 2 = (log p - log m) / 2; the +1 terms cancel under softmax
    grad_p = _softmax_backward(p, 0.5 * (lp - lm)) / n
    grad_q = _softmax_backward(q, 0.5 * (lq - lm)) / n
    return float(np.clip(js / n, 0.0, np.log(2.0))), grad_p, grad_q


def cw_margin(logits, labels, kappa=0.0):
    """Per-row ``max(z_true - max_{k != true} z_k, -kappa)`` and its logit gradient (summed loss)."""
    logits = np.asarray(logits)
    idx = np.arange(len(labels))
    z_true = logits[idx, labels]
    others = logits.copy()
    others[idx, labels] = -np.inf
    best = others.argmax(axis=1)
    margin = z_true - others[idx, best]
    active = margin > -kappa
    grad = np.zeros_like(logits)
    grad[idx, labels] = active
    grad[idx, best] -= active
    return np.maximum(margin, -kappa), grad


@dataclass
class LossBreakdown:
    ce: float
    js_aug: float
    js_adv: float
    total: float
    grad_clean: np.ndarray
    grad_aug: np.ndarray
    grad_adv: np.ndarray


def augrmixat_loss(logits_clean, logits_aug, logits_adv, soft_labels, lambda1, lambda2) -> LossBreakdown:
    """Soft CE on the mixed clean view plus weighted JS consistency to the augmented and adversarial views."""
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError(f"lambda weights must be non-negative, got {lambda1}, {lambda2}")
    if not np.shape(logits_clean) == np.shape(logits_aug) == np.shape(logits_adv):
        raise ValueError("all three logit batches must share a shape")
    ce, g_clean = soft_cross_entropy(logits_clean, soft_labels)
    js_aug, gp_aug, gq_aug = js_divergence(logits_clean, logits_aug)
    js_adv, gp_adv, gq_adv = js_divergence(logits_clean, logits_adv)
    grad_clean = g_clean
    if lambda1:
        grad_clean = grad_clean + lambda1 * gp_aug
    if lambda2:
        grad_clean = grad_clean + lambda2 * gp_adv
    return LossBreakdown(
        ce=ce, js_aug=js_aug, js_adv=js_adv,
        total=ce + lambda1 * js_aug + lambda2 * js_adv,
        grad_clean=grad_clean, grad_aug=lambda1 * gq_aug, grad_adv=lambda2 * gq_adv,
    )
