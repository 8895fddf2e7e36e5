"""Semi-supervised classification with adaptive per-class confidence margins."""
from .augment import AugmentPolicy, Augmenter, strong_augment, weak_augment
from .data import Dataset, SplitSpec, load_dataset, split, synth_benchmark
from .losses import (
    LossWeights,
    average_distribution,
    contrastive_loss,
    cosine_sim,
    supervised_ce,
    total_loss,
    unsupervised_ce,
)
from .margin import (
    ConfidenceMargin,
    Partition,
    collect_correct,
    compute_raw_margins,
    effective_margin,
    fixed_threshold_partition,
    partition_batch,
)
from .metrics import AggregateReport, RunMetrics, aggregate, export, pseudo_label_precision
from .nn import Architecture, ModelParams, adam_update, backward, forward, softmax
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"
