"""AugRmixAT: multi-view robust training (clean / augment-and-mix / adversarial) on a numpy backprop core."""

__version__ = "0.1.0"

from .adversarial import AttackSpec, cw_attack, fgsm_attack, pgd_attack, pgd_generate, transfer_attack
from .augment import AugmentAndMix, AugmentConfig, augment_and_mix
from .estimator import AugRmixATClassifier
from .losses import augrmixat_loss, js_divergence, kl_divergence, soft_cross_entropy
from .mix import MixPlan, rmix
from .model import SGD, LayerStack, cosine_lr, mlp, tiny_cnn
from .numerics import Rng
from .robustness import Corruption, CorruptionSpec, Occlusion, OcclusionSpec
from .trainer import TrainConfig, train, train_augrmixat, train_pgdat, train_standard

__all__ = [
    "AttackSpec", "AugRmixATClassifier", "AugmentAndMix", "AugmentConfig", "Corruption", "CorruptionSpec",
    "LayerStack", "MixPlan", "Occlusion", "OcclusionSpec", "Rng", "SGD", "TrainConfig", "augment_and_mix",
    "augrmixat_loss", "cosine_lr", "cw_attack", "fgsm_attack", "js_divergence", "kl_divergence", "mlp",
    "pgd_attack", "pgd_generate", "rmix", "soft_cross_entropy", "tiny_cnn", "train", "train_augrmixat",
    "train_pgdat", "train_standard", "transfer_attack",
]
