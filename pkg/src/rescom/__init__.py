"""Rebalanced Siamese contrastive mining for long-tailed classification."""

__version__ = "0.1.0"

from .classifier import balanced_softmax_loss, siambs_loss
from .contrastive import (
    ContrastiveConfig,
    LossResult,
    bq_loss,
    cb_supcon_loss,
    class_weight,
    gradient_norm_profile,
    mine_pairs,
    spm_loss,
    supcon_queue_loss,
)
from .data import (
    Dataset,
    load_csv_dataset,
    make_balanced_test,
    make_longtailed_synthetic,
    make_synthetic_from_profile,
    subsample_longtailed,
)
from .estimator import ResComClassifier
from .imbalance import (
    LongTailProfile,
    contrastive_imbalance_factor,
    expected_positive_pairs,
    simulate_pair_frequencies,
)
from .queue import ClassQueueBank
from .trainer import EvalReport, TrainConfig, evaluate, train, train_baseline, train_rescom

__all__ = [
    "ClassQueueBank",
    "ContrastiveConfig",
    "Dataset",
    "EvalReport",
    "LongTailProfile",
    "LossResult",
    "ResComClassifier",
    "TrainConfig",
    "balanced_softmax_loss",
    "bq_loss",
    "cb_supcon_loss",
    "class_weight",
    "contrastive_imbalance_factor",
    "evaluate",
    "expected_positive_pairs",
    "gradient_norm_profile",
    "load_csv_dataset",
    "make_balanced_test",
    "make_longtailed_synthetic",
    "make_synthetic_from_profile",
    "mine_pairs",
    "siambs_loss",
    "simulate_pair_frequencies",
    "spm_loss",
    "subsample_longtailed",
    "supcon_queue_loss",
    "train",
    "train_baseline",
    "train_rescom",
]
