"""Self-supervised decorrelation pretraining for handwritten word images.

Word images are normalized onto 64x128 canvases, tiled into eight 32x32
patches, and encoded by a weight-shared backbone + projector.  Pretraining
drives the cross-correlation matrix between two augmented views toward the
identity; downstream, a linear head identifies writers at word and page level,
and the analysis tools test how correlated the patch embeddings remain.
"""

from .analysis import (
    CorrelationMap,
    DegenerateSampleError,
    TTestResult,
    analyze_images,
    bonferroni_adjust,
    kde_density,
    left_tailed_t_test,
    normality_diagnostics,
    pairwise_test_maps,
    patch_correlation_map,
    pearson_correlation_matrix,
    student_t_cdf,
)
from .config import ConfigError, ExperimentConfig, config_from_dict, resolve_config
from .encoder import (
    EncoderConfig,
    PatchEncoder,
    build_encoder,
    load_backbone,
    load_pretrain_checkpoint,
    pool_patch_features,
    save_pretrain_checkpoint,
)
from .losses import (
    DegenerateDimensionError,
    LossBreakdown,
    cross_correlation,
    decorrelation_objective,
    l2_normalize_dims,
    preprocess_embeddings,
    standardize_dims,
    swis_d_loss,
)
from .manifest import (
    DatasetManifest,
    ManifestError,
    SampleRecord,
    SplitError,
    ValidationReport,
    make_fragnet_splits,
    parse_manifest,
    validate_dataset,
    write_manifest,
)
from .preprocess import (
    AugmentParams,
    DegenerateImageError,
    PatchBatch,
    augment_pair,
    normalize_canvas,
    otsu_threshold,
    patchify,
    prepare_canvas,
    tight_crop,
)
from .pretrain import (
    PretrainConfig,
    PretrainError,
    effective_rank,
    lr_schedule,
    run_pretraining,
)
from .probe import (
    ProbeConfig,
    ProbeError,
    WriterClassifier,
    evaluate_page_level,
    evaluate_word_level,
    finetune_semi_supervised,
    majority_vote,
    predict_words,
    stratified_subsample,
    train_linear_probe,
)
from .seeding import derive_seed
from .synthetic import generate_dataset

__version__ = "0.1.0"

__all__ = [
    "AugmentParams",
    "DegenerateImageError",
    "ConfigError",
    "CorrelationMap",
    "DatasetManifest",
    "DegenerateDimensionError",
    "DegenerateSampleError",
    "EncoderConfig",
    "ExperimentConfig",
    "LossBreakdown",
    "ManifestError",
    "PatchBatch",
    "PatchEncoder",
    "PretrainConfig",
    "PretrainError",
    "ProbeConfig",
    "ProbeError",
    "SampleRecord",
    "SplitError",
    "TTestResult",
    "ValidationReport",
    "WriterClassifier",
    "analyze_images",
    "augment_pair",
    "bonferroni_adjust",
    "build_encoder",
    "config_from_dict",
    "cross_correlation",
    "decorrelation_objective",
    "derive_seed",
    "effective_rank",
    "evaluate_page_level",
    "evaluate_word_level",
    "finetune_semi_supervised",
    "generate_dataset",
    "kde_density",
    "l2_normalize_dims",
    "left_tailed_t_test",
    "load_backbone",
    "load_pretrain_checkpoint",
    "lr_schedule",
    "majority_vote",
    "make_fragnet_splits",
    "normality_diagnostics",
    "normalize_canvas",
    "otsu_threshold",
    "pairwise_test_maps",
    "parse_manifest",
    "patch_correlation_map",
    "patchify",
    "pearson_correlation_matrix",
    "pool_patch_features",
    "predict_words",
    "prepare_canvas",
    "preprocess_embeddings",
    "resolve_config",
    "run_pretraining",
    "save_pretrain_checkpoint",
    "standardize_dims",
    "stratified_subsample",
    "student_t_cdf",
    "swis_d_loss",
    "tight_crop",
    "train_linear_probe",
    "validate_dataset",
    "write_manifest",
]
