"""Per-sample representation quality scores and sparsity regularisation.

Scores how sparse and peaked each sample's latent representation is,
benchmarks those scores as predictors of downstream correctness, and trains
a small contrastive encoder whose loss pushes representations toward that
shape.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    EvaluationError,
    InputError,
    InvariantError,
    NumericalError,
    RepscoreError,
)
from .evaluation import (  # noqa: E402
    class_profiles,
    metric_benchmark,
    pr_curve,
    roc_curve,
    sorted_feature_profile,
)
from .losses import LossConfig, total_loss  # noqa: E402
from .metrics import (  # noqa: E402
    QualityReport,
    batch_quality_report,
    l1_norm,
    mean,
    q_score,
    soft_sparsity,
    std,
    zscore_max,
)
from .network import EncoderParams, encode, init_params  # noqa: E402
from .repstore import LabelSet, RepresentationMatrix, load_matrix, save_matrix  # noqa: E402
from .saliency import dominant_feature_index, saliency_map  # noqa: E402
from .trainer import TrainOptions, ab_compare, generate_dataset, train_encoder  # noqa: E402

__all__ = [
    "EncoderParams",
    "EvaluationError",
    "InputError",
    "InvariantError",
    "LabelSet",
    "LossConfig",
    "NumericalError",
    "QualityReport",
    "RepresentationMatrix",
    "RepscoreError",
    "TrainOptions",
    "ab_compare",
    "batch_quality_report",
    "class_profiles",
    "dominant_feature_index",
    "encode",
    "generate_dataset",
    "init_params",
    "l1_norm",
    "load_matrix",
    "mean",
    "metric_benchmark",
    "pr_curve",
    "q_score",
    "roc_curve",
    "save_matrix",
    "saliency_map",
    "soft_sparsity",
    "sorted_feature_profile",
    "std",
    "total_loss",
    "train_encoder",
    "zscore_max",
]
