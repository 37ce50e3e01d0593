"""L-infinity attacks: training-time KL-consistency PGD, and FGSM / PGD / CW-PGD / transfer for evaluation.

The model is read-only throughout: only input gradients are computed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .losses import cw_margin, kl_divergence, soft_cross_entropy
from .model import LayerStack
from .numerics import Rng, one_hot, softmax
from .robustness import top_k_accuracy

LOSS_KINDS = ("kl_consistency", "cross_entropy", "cw_margin")


@dataclass
class AttackSpec:
    eps: float = 0.031
    step: float = 0.003
    iters: int = 20
    loss_kind: str = "cross_entropy"
    random_start: bool = True
    init: str = "gaussian"     # "gaussian" (init_sigma * N(0, I)) or "uniform" (U[-eps, eps])
    init_sigma: float = 0.001

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.iters < 0:
            raise ValueError(f"iters must be >= 0, got {self.iters}")
        if self.iters > 0 and not self.step > 0:
            raise ValueError(f"step must be > 0 when iters > 0, got {self.step}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss_kind {self.loss_kind!r}; choose from {LOSS_KINDS}")
        if self.init not in ("gaussian", "uniform"):
            raise ValueError(f"init must be 'gaussian' or 'uniform', got {self.init!r}")

    def to_dict(self):
        return asdict(self)


def train_attack_spec() -> AttackSpec:
    return AttackSpec(eps=0.031, step=0.007, iters=10, loss_kind="kl_consistency",
                      random_start=True, init="gaussian", init_sigma=0.001)


def project(x_adv, x, eps):
    """Clamp into the eps-ball around ``x``, then into [0, 1]."""
    x_adv = np.clip(x_adv, x - eps, x + eps)
    return np.clip(x_adv, 0.0, 1.0)


def _labels(y, num_classes):
    y = np.asarray(y)
    if y.ndim == 2:
        return y.argmax(axis=1), y
    return y.astype(np.int64), one_hot(y, num_classes)


def _input_grad(stack: LayerStack, x_adv, loss_kind, target):
    logits, tape = stack.forward_tape(x_adv, train_mode=True)
    if loss_kind == "kl_consistency":
        _, g = kl_divergence(target, logits)
    elif loss_kind == "cross_entropy":
        _, g = soft_cross_entropy(logits, target)
    else:
        labels, _ = target
        _, gm = cw_margin(logits, labels)
        g = -gm  # ascend the negated margin
    _, dx = stack.backward(g, tape=tape, param_grads=False)
    return dx


def _start(x, spec: AttackSpec, rng: Rng | None):
    if not spec.random_start:
        return x.copy()
    rng = rng or Rng(0)
    if spec.init == "uniform":
        noise = rng.uniform(-spec.eps, spec.eps, x.shape)
    else:
        noise = spec.init_sigma * rng.normal(x.shape)
    return project(x + noise.astype(x.dtype), x, spec.eps)


def _pgd_loop(stack, x, spec: AttackSpec, target, rng):
    x = np.asarray(x, dtype=stack.dtype)
    x_adv = _start(x, spec, rng)
    for _ in range(spec.iters):
        g = _input_grad(stack, x_adv, spec.loss_kind, target)
        x_adv = project(x_adv + spec.step * np.sign(g), x, spec.eps)
    return x_adv


def pgd_generate(stack: LayerStack, x, spec: AttackSpec, rng: Rng | None = None):
    """Maximise KL(f(x) || f(x_adv)) from a small Gaussian start; the clean prediction is a fixed target."""
    x = np.asarray(x, dtype=stack.dtype)
    target = stack.forward(x)
    spec = AttackSpec(**{**spec.to_dict(), "loss_kind": "kl_consistency"})
    return _pgd_loop(stack, x, spec, target, rng)


def fgsm_attack(stack: LayerStack, x, y, eps):
    x = np.asarray(x, dtype=stack.dtype)
    _, y_soft = _labels(y, stack.num_classes)
    g = _input_grad(stack, x, "cross_entropy", y_soft)
    return project(x + eps * np.sign(g), x, eps)


def pgd_attack(stack: LayerStack, x, y, spec: AttackSpec, rng: Rng | None = None):
    """Cross-entropy PGD towards misclassifying the true label."""
    _, y_soft = _labels(y, stack.num_classes)
    spec = AttackSpec(**{**spec.to_dict(), "loss_kind": "cross_entropy"})
    return _pgd_loop(stack, x, spec, y_soft, rng)


def cw_attack(stack: LayerStack, x, y, spec: AttackSpec, rng: Rng | None = None):
    """PGD on the CW margin (kappa = 0)."""
    labels, y_soft = _labels(y, stack.num_classes)
    spec = AttackSpec(**{**spec.to_dict(), "loss_kind": "cw_margin"})
    return _pgd_loop(stack, x, spec, (labels, y_soft), rng)


def run_attack(stack, x, y, method, spec: AttackSpec, rng: Rng | None = None, batch_size=256):
    """Batched dispatch over ``method`` in {"fgsm", "pgd", "cw"}."""
    x = np.asarray(x)
    rng = rng or Rng(0)
    out = np.empty(x.shape, dtype=stack.dtype)
    for b, i in enumerate(range(0, len(x), batch_size)):
        xb, yb = x[i:i + batch_size], np.asarray(y)[i:i + batch_size]
        if method == "fgsm":
            out[i:i + batch_size] = fgsm_attack(stack, xb, yb, spec.eps)
        elif method == "pgd":
            out[i:i + batch_size] = pgd_attack(stack, xb, yb, spec, rng.child(b))
        elif method == "cw":
            out[i:i + batch_size] = cw_attack(stack, xb, yb, spec, rng.child(b))
        else:
            raise ValueError(f"unknown attack {method!r}; choose from fgsm, pgd, cw")
    return out


def robust_accuracy(stack, x, labels, method, spec: AttackSpec, rng: Rng | None = None):
    x_adv = run_attack(stack, x, labels, method, spec, rng)
    return top_k_accuracy(stack.predict_logits(x_adv), labels, 1)


def transfer_attack(source: LayerStack, target: LayerStack, x, labels, spec: AttackSpec,
                    rng: Rng | None = None, method="pgd"):
    """Craft on ``source``, score Top-1 accuracy of ``target`` on the crafted inputs."""
    if source.input_shape != target.input_shape:
        raise ValueError(f"source input {source.input_shape} != target input {target.input_shape}")
    x_adv = run_attack(source, x, labels, method, spec, rng)
    return top_k_accuracy(target.predict_logits(x_adv), labels, 1)


def clean_accuracy(stack, x, labels):
    return top_k_accuracy(stack.predict_logits(x), labels, 1)


def prediction_probs(stack, x):
    return softmax(stack.predict_logits(x).astype(np.float64))
