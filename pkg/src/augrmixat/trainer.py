"""Training loops: AugRmixAT, plain (Standard) and PGD adversarial training, plus the lambda sweep."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .adversarial import AttackSpec, pgd_attack, pgd_generate, robust_accuracy, train_attack_spec
from .augment import AugmentConfig, augment_batch
from .losses import augrmixat_loss, soft_cross_entropy
from .mix import METHODS, rmix
from .model import ARCHITECTURES, SGD, LayerStack, build_model, cosine_lr
from .numerics import NonFiniteError, Rng, one_hot
from .robustness import corruption_report, occlusion_report, top_k_accuracy

log = logging.getLogger(__name__)

MODES = ("augrmixat", "standard", "pgdat")
REPORT_FIELDS = ("epoch", "lr", "ce", "js_aug", "js_adv", "total", "train_top1", "wall_ms")
SWEEP_FIELDS = ("lambda1", "lambda2", "clean", "fgsm", "pgd10", "pgd20", "cw20", "corr", "occ")

# child-stream indices; each consumer owns its stream so the others never shift
_INIT, _EPOCH = 0, 1_000_000
_SHUFFLE, _AUG, _ADV, _MIX = 0, 1, 2, 3


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"diverged at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    mode: str = "augrmixat"
    lambda1: float = 1.0
    lambda2: float = 1.0
    attack: AttackSpec = field(default_factory=train_attack_spec)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    batch_size: int = 64
    epochs: int = 30
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    arch: str = "tiny_cnn"
    mix_methods: tuple = METHODS
    mix_gamma: float | None = None
    checkpoint_every: int = 0
    precision: str = "single"

    def __post_init__(self):
        if isinstance(self.attack, dict):
            self.attack = AttackSpec(**self.attack)
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        self.mix_methods = tuple(self.mix_methods)

    def validate(self):
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            problems.append(f"lambda1/lambda2 must be >= 0, got {self.lambda1}, {self.lambda2}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1, got {self.epochs}")
        if self.lr0 < 0 or self.momentum < 0 or self.weight_decay < 0:
            problems.append("lr0, momentum and weight_decay must be >= 0")
        if self.arch not in ARCHITECTURES:
            problems.append(f"arch must be one of {sorted(ARCHITECTURES)}, got {self.arch!r}")
        if self.precision not in ("single", "double"):
            problems.append(f"precision must be 'single' or 'double', got {self.precision!r}")
        if self.mix_gamma is not None and not 0 <= self.mix_gamma <= 1:
            problems.append(f"mix_gamma must be in [0, 1], got {self.mix_gamma}")
        for sub in (self.attack, self.augment):
            try:
                sub.validate()
            except ValueError as exc:
                problems.append(str(exc))
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mix_methods"] = list(self.mix_methods)
        d["augment"]["ops"] = list(self.augment.ops)
        d["augment"]["depth_range"] = list(self.augment.depth_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        """Build from a (possibly partial) dict; unknown keys at any level raise ``KeyError``."""
        unknown = unknown_keys(data)
        if unknown:
            raise KeyError(f"unknown config keys: {', '.join(unknown)}")
        data = dict(data)
        if "attack" in data:
            data["attack"] = AttackSpec(**{**train_attack_spec().to_dict(), **data["attack"]})
        if "augment" in data:
            data["augment"] = AugmentConfig(**data["augment"])
        return cls(**data)


def unknown_keys(data: dict) -> list[str]:
    top = {f.name for f in fields(TrainConfig)}
    nested = {"attack": {f.name for f in fields(AttackSpec)}, "augment": {f.name for f in fields(AugmentConfig)}}
    bad = [k for k in data if k not in top]
    for key, allowed in nested.items():
        sub = data.get(key)
        if sub is not None and not isinstance(sub, dict):
            bad.append(key)
        elif sub:
            bad += [f"{key}.{k}" for k in sub if k not in allowed]
    return bad


@dataclass
class EpochReport:
    epoch: int
    lr: float
    ce: float
    js_aug: float
    js_adv: float
    total: float
    train_top1: float
    wall_ms: int


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for r in reports:
        w.writerow([r.epoch, repr(r.lr), repr(r.ce), repr(r.js_aug), repr(r.js_adv), repr(r.total),
                    repr(r.train_top1), r.wall_ms])
    return buf.getvalue()


# per-batch steps ---------------------------------------------------------------

def _standard_step(stack, X, Y, cfg, rng):
    logits, tape = stack.forward_tape(X)
    ce, g = soft_cross_entropy(logits, Y)
    grads, _ = stack.backward(g, tape=tape)
    return grads, (ce, 0.0, 0.0, ce), logits


def _pgdat_step(stack, X, Y, cfg, rng):
    x_adv = pgd_attack(stack, X, Y, cfg.attack, rng.child(_ADV))
    return _standard_step(stack, x_adv, Y, cfg, rng)


def _augrmixat_step(stack, X, Y, cfg, rng):
    x_bar = augment_batch(X, cfg.augment, rng.child(_AUG))
    x_hat = pgd_generate(stack, X, cfg.attack, rng.child(_ADV))
    Xm, Xbar_m, Xhat_m, Ym, _ = rmix(X, x_bar, x_hat, Y, rng.child(_MIX), cfg.mix_methods, cfg.mix_gamma)
    logits, tape = stack.forward_tape(Xm)
    logits_aug, tape_aug = stack.forward_tape(Xbar_m)
    logits_adv, tape_adv = stack.forward_tape(Xhat_m)
    lb = augrmixat_loss(logits, logits_aug, logits_adv, Ym, cfg.lambda1, cfg.lambda2)
    grads, _ = stack.backward(lb.grad_clean, tape=tape)
    for weight, g, t in ((cfg.lambda1, lb.grad_aug, tape_aug), (cfg.lambda2, lb.grad_adv, tape_adv)):
        if weight:
            extra, _ = stack.backward(g, tape=t)
            grads = [a + b for a, b in zip(grads, extra)]
    return grads, (lb.ce, lb.js_aug, lb.js_adv, lb.total), logits


_STEPS = {"standard": _standard_step, "pgdat": _pgdat_step, "augrmixat": _augrmixat_step}


def init_model(input_shape, num_classes, cfg: TrainConfig) -> LayerStack:
    return build_model(cfg.arch, input_shape, num_classes, Rng(cfg.seed).child(_INIT), dtype=cfg.dtype)


def train(X, y, cfg: TrainConfig, num_classes=None, on_epoch=None, stack=None):
    """Run ``cfg.mode`` training; returns ``(stack, reports)``.

    ``on_epoch(epoch, stack, report)`` is called after every epoch (used for
    periodic checkpoints).
    """
    cfg.validate()
    X = np.asarray(X, dtype=cfg.dtype)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 4 or len(X) == 0:
        raise ValueError(f"training images must be a non-empty [N, C, H, W] array, got {X.shape}")
    if y.shape != (len(X),):
        raise ValueError(f"{len(X)} images but {y.shape} labels")
    k = int(num_classes or y.max() + 1)
    if y.min() < 0 or y.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    Y = one_hot(y, k, dtype=cfg.dtype)
    stack = stack if stack is not None else init_model(X.shape[1:], k, cfg)
    opt = SGD(lr=cfg.lr0, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    step = _STEPS[cfg.mode]
    root = Rng(cfg.seed)
    reports = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        opt.lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)
        erng = root.child(_EPOCH + epoch)
        order = erng.child(_SHUFFLE).permutation(len(X))
        sums = np.zeros(4)
        batches = correct = 0
        for b, start in enumerate(range(0, len(X), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    grads, terms, logits = step(stack, X[idx], Y[idx], cfg, erng.child(1 + b))
            except NonFiniteError:
                raise TrainingDiverged(epoch) from None
            if not all(math.isfinite(t) for t in terms):
                raise TrainingDiverged(epoch)
            with np.errstate(over="ignore", invalid="ignore"):
                opt.step(stack, grads)
            sums += terms
            batches += 1
            correct += int((logits.argmax(axis=1) == Y[idx].argmax(axis=1)).sum())
        ce, js_aug, js_adv, total = sums / batches
        rep = EpochReport(epoch, opt.lr, ce, js_aug, js_adv, total, correct / len(X),
                          int(round(1000 * (time.perf_counter() - t0))))
        reports.append(rep)
        log.info("epoch %d lr %.4f loss %.4f top1 %.3f", epoch, rep.lr, rep.total, rep.train_top1)
        if on_epoch is not None:
            on_epoch(epoch, stack, rep)
    return stack, reports


def _with_mode(cfg: TrainConfig, mode: str) -> TrainConfig:
    return TrainConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(cfg)}, "mode": mode})


def train_augrmixat(X, y, cfg: TrainConfig, **kw):
    return train(X, y, _with_mode(cfg, "augrmixat"), **kw)


def train_standard(X, y, cfg: TrainConfig, **kw):
    return train(X, y, _with_mode(cfg, "standard"), **kw)


def train_pgdat(X, y, cfg: TrainConfig, **kw):
    """PGD adversarial training: cross-entropy PGD with the training budget, CE on adversarial inputs only."""
    return train(X, y, _with_mode(cfg, "pgdat"), **kw)


# evaluation -----------------------------------------------------------------------

def eval_attack_spec(iters=20, random_start=True) -> AttackSpec:
    return AttackSpec(eps=0.031, step=0.003, iters=iters, loss_kind="cross_entropy", random_start=random_start)


def evaluate(stack: LayerStack, X, labels, seed=0, which=("clean", "fgsm", "pgd10", "pgd20", "cw20", "corr", "occ"),
             block_frac=0.4) -> dict:
    """The sweep-table metrics: clean, white-box (FGSM/PGD10/PGD20/CW20), corruption mCA, occlusion mean."""
    rng = Rng(seed)
    out = {}
    if "clean" in which:
        out["clean"] = top_k_accuracy(stack.predict_logits(X), labels, 1)
    if "fgsm" in which:
        out["fgsm"] = robust_accuracy(stack, X, labels, "fgsm", eval_attack_spec(1), rng.child(1))
    if "pgd10" in which:
        out["pgd10"] = robust_accuracy(stack, X, labels, "pgd", eval_attack_spec(10), rng.child(2))
    if "pgd20" in which:
        out["pgd20"] = robust_accuracy(stack, X, labels, "pgd", eval_attack_spec(20), rng.child(3))
    if "cw20" in which:
        out["cw20"] = robust_accuracy(stack, X, labels, "cw", eval_attack_spec(20), rng.child(4))
    if "corr" in which:
        out["corr"] = corruption_report(stack.predict_logits, X, labels, rng.child(5))["mca"]
    if "occ" in which:
        out["occ"] = occlusion_report(stack.predict_logits, X, labels, rng.child(6), block_frac)["mean"]
    return out


def sweep_pairs(lambda1s, lambda2s):
    """One-axis-at-a-time grid: vary lambda1 at the first lambda2, then lambda2 at the first lambda1."""
    if not lambda1s or not lambda2s:
        raise ValueError("lambda lists must be non-empty")
    pairs = [(l1, lambda2s[0]) for l1 in lambda1s] + [(lambda1s[0], l2) for l2 in lambda2s]
    return list(dict.fromkeys(pairs))


def lambda_sweep(X, y, base_cfg: TrainConfig, lambda1s, lambda2s, X_test=None, y_test=None,
                 num_classes=None, eval_seed=0):
    X_test = X if X_test is None else X_test
    y_test = y if y_test is None else y_test
    rows = []
    for l1, l2 in sweep_pairs(lambda1s, lambda2s):
        cfg = TrainConfig(**{**{f.name: getattr(base_cfg, f.name) for f in fields(base_cfg)},
                             "mode": "augrmixat", "lambda1": l1, "lambda2": l2})
        stack, _ = train(X, y, cfg, num_classes=num_classes)
        rows.append({"lambda1": l1, "lambda2": l2, **evaluate(stack, X_test, y_test, seed=eval_seed)})
    return rows


def sweep_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(float(r[k])) if isinstance(r[k], float) else r[k] for k in SWEEP_FIELDS})
    return buf.getvalue()
