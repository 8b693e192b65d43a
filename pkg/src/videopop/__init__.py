"""Multimodal social-video popularity prediction.

Pipeline: ingest post/user tables and frame-embedding matrices, build
pooled-PCA visual features plus user/temporal/text/tag context features,
train a from-scratch Huber-loss gradient-boosted tree ensemble over K
folds, and evaluate with MAPE, ablations, and importance reports.
"""

__version__ = "0.1.0"

from .dataset import (
    Dataset,
    EmbeddingMatrix,
    LabeledExample,
    PostRecord,
    UserProfile,
    compute_label,
    join,
    load_dataset,
    load_embeddings,
    load_posts,
    load_users,
    save_embeddings,
    save_embeddings_csv,
)
from .ensemble import (
    EnsembleModel,
    MetricsReport,
    PipelineConfig,
    ablation_run,
    distribution_summary,
    kfold_split,
    mape,
    mape_result,
    predict_ensemble,
    train_cv,
)
from .errors import ConfigError, DataError, FormatError, SchemaMismatchError
from .features import (
    FeatureBuilder,
    FeatureSchema,
    TagPopularityEncoder,
    fuse_blocks,
    metadata_features,
    temporal_encode,
    text_stats,
    user_features,
)
from .gbdt import (
    FeatureImportance,
    HuberBoostingRegressor,
    OrderedTargetEncoder,
    huber_gradient,
    huber_loss,
    huber_pseudo_residuals,
)
from .preprocess import (
    ColumnStats,
    IqrBounds,
    IqrWinsorizer,
    PopulationScaler,
    filter_label_outliers,
    iqr_bounds,
    log1p_transform,
)
from .synth import SynthConfig, SynthData, describe, generate, write_dataset
from .tree import RegressionTree, fit_tree
from .visual import FramePCA, average_pool, pool_embeddings, video_feature

__all__ = [
    "Dataset",
    "EmbeddingMatrix",
    "LabeledExample",
    "PostRecord",
    "UserProfile",
    "compute_label",
    "join",
    "load_dataset",
    "load_embeddings",
    "load_posts",
    "load_users",
    "save_embeddings",
    "save_embeddings_csv",
    "EnsembleModel",
    "MetricsReport",
    "PipelineConfig",
    "ablation_run",
    "distribution_summary",
    "kfold_split",
    "mape",
    "mape_result",
    "predict_ensemble",
    "train_cv",
    "ConfigError",
    "DataError",
    "FormatError",
    "SchemaMismatchError",
    "FeatureBuilder",
    "FeatureSchema",
    "TagPopularityEncoder",
    "fuse_blocks",
    "metadata_features",
    "temporal_encode",
    "text_stats",
    "user_features",
    "FeatureImportance",
    "HuberBoostingRegressor",
    "OrderedTargetEncoder",
    "huber_gradient",
    "huber_loss",
    "huber_pseudo_residuals",
    "ColumnStats",
    "IqrBounds",
    "IqrWinsorizer",
    "PopulationScaler",
    "filter_label_outliers",
    "iqr_bounds",
    "log1p_transform",
    "SynthConfig",
    "SynthData",
    "describe",
    "generate",
    "write_dataset",
    "RegressionTree",
    "fit_tree",
    "FramePCA",
    "average_pool",
    "pool_embeddings",
    "video_feature",
]
