"""scikit-learn compatible classifier around the training loops."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from .adversarial import AttackSpec
from .augment import BASE_OPS, AugmentConfig
from .mix import METHODS
from .numerics import softmax
from .trainer import TrainConfig, evaluate, train
from .validation import check_images


class AugRmixATClassifier(ClassifierMixin, BaseEstimator):
    """Image classifier trained with AugRmixAT, plain CE, or PGD adversarial training.

    ``X`` is an ``[N, C, H, W]`` array in ``[0, 1]``; ``y`` any class labels.
    Hyper-parameters are flat so that ``get_params``/``set_params`` and grid
    search work; :meth:`to_config` assembles the equivalent
    :class:`~augrmixat.trainer.TrainConfig`.
    """

    def __init__(self, mode="augrmixat", lambda1=1.0, lambda2=1.0, eps=0.031, attack_step=0.007,
                 attack_iters=10, init_sigma=0.001, alpha=1.0, num_chains=3, depth_range=(1, 3),
                 severity=3, ops=BASE_OPS, mix_methods=METHODS, batch_size=64, epochs=30, lr0=0.1,
                 momentum=0.9, weight_decay=5e-4, arch="tiny_cnn", precision="single", random_state=0):
        self.mode = mode
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.eps = eps
        self.attack_step = attack_step
        self.attack_iters = attack_iters
        self.init_sigma = init_sigma
        self.alpha = alpha
        self.num_chains = num_chains
        self.depth_range = depth_range
        self.severity = severity
        self.ops = ops
        self.mix_methods = mix_methods
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr0 = lr0
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.arch = arch
        self.precision = precision
        self.random_state = random_state

    def to_config(self) -> TrainConfig:
        attack = AttackSpec(eps=self.eps, step=self.attack_step, iters=self.attack_iters,
                            loss_kind="cross_entropy" if self.mode == "pgdat" else "kl_consistency",
                            random_start=True, init_sigma=self.init_sigma)
        augment = AugmentConfig(alpha=self.alpha, num_chains=self.num_chains, depth_range=self.depth_range,
                                severity=self.severity, ops=self.ops)
        return TrainConfig(mode=self.mode, lambda1=self.lambda1, lambda2=self.lambda2, attack=attack,
                           augment=augment, batch_size=self.batch_size, epochs=self.epochs, lr0=self.lr0,
                           momentum=self.momentum, weight_decay=self.weight_decay, seed=self.random_state,
                           arch=self.arch, mix_methods=self.mix_methods, precision=self.precision).validate()

    def fit(self, X, y):
        X = check_images(X)
        check_classification_targets(y)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        codes = self._encoder.transform(y)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.input_shape_ = X.shape[1:]
        self.model_, self.history_ = train(X, codes, self.to_config(), num_classes=len(self.classes_))
        return self

    def _checked(self, X):
        check_is_fitted(self, "model_")
        X = check_images(X)
        if X.shape[1:] != tuple(self.input_shape_):
            raise ValueError(f"expected images of shape {tuple(self.input_shape_)}, got {X.shape[1:]}")
        return X

    def decision_function(self, X):
        X = self._checked(X)
        return self.model_.predict_logits(X).astype(np.float64)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def robustness_report(self, X, y, seed=0, **kw) -> dict:
        """Clean, white-box, corruption (mCA) and occlusion accuracies on ``(X, y)``."""
        X = self._checked(X)
        return evaluate(self.model_, X, self._encoder.transform(y), seed=seed, **kw)
