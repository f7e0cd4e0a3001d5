"""Test-time padding defense for zero-shot image classifiers.

Detect adversarial inputs through the padding-induced embedding similarity
shift, adapt detected inputs with one entropy-minimization step on trainable
border padding, and aggregate padded views with a similarity-aware ensemble.
"""

from .adapter import AdaptationConfig, ViewBatch, adapt_padding, entropy, generate_views, select_confident
from .attacks import AttackConfig, cw, deepfool, fgsm, pgd, run_attack
from .detector import DetectorConfig, Verdict, calibrate_threshold, detect, similarity_shift
from .encoders import (
    ClassifierConfig,
    ClassPrototypeSet,
    Embedding,
    EncoderHandle,
    ProbabilityVector,
    classify,
    cosine_similarity,
    encode_image,
    encode_text_prototypes,
    make_backend,
    make_toy_encoder,
    register_backend,
)
from .ensemble import ViewScore, aggregate_prediction, softmax_weights, view_scores
from .errors import ConfigurationError, DegenerateInputError, IngestionError, InvalidArgumentError
from .harness import (
    DatasetManifest,
    EvaluationRecord,
    MetricsSummary,
    RunConfig,
    compute_metrics,
    emit_report,
    load_dataset,
    make_synthetic_dataset,
    run_benchmark,
    sweep_padding_size,
    sweep_threshold,
)
from .images import ImageBuffer, image_from_array, load_image, save_image
from .padding import (
    PaddingPattern,
    PatternKind,
    TrainablePadding,
    apply_fixed_padding,
    apply_trainable_padding,
    init_trainable_padding,
    sgd_step,
)
from .pipeline import PredictionOutcome, TtpConfig, batch_predict, register_clean_strategy, ttp_predict

__version__ = "0.1.0"

__all__ = [
    "AdaptationConfig",
    "AttackConfig",
    "ClassPrototypeSet",
    "ClassifierConfig",
    "ConfigurationError",
    "DatasetManifest",
    "DegenerateInputError",
    "DetectorConfig",
    "Embedding",
    "EncoderHandle",
    "EvaluationRecord",
    "ImageBuffer",
    "IngestionError",
    "InvalidArgumentError",
    "MetricsSummary",
    "PaddingPattern",
    "PatternKind",
    "PredictionOutcome",
    "ProbabilityVector",
    "RunConfig",
    "TrainablePadding",
    "TtpConfig",
    "Verdict",
    "ViewBatch",
    "ViewScore",
    "adapt_padding",
    "aggregate_prediction",
    "apply_fixed_padding",
    "apply_trainable_padding",
    "batch_predict",
    "calibrate_threshold",
    "classify",
    "compute_metrics",
    "cosine_similarity",
    "cw",
    "deepfool",
    "detect",
    "emit_report",
    "encode_image",
    "encode_text_prototypes",
    "entropy",
    "fgsm",
    "generate_views",
    "image_from_array",
    "init_trainable_padding",
    "load_dataset",
    "load_image",
    "make_backend",
    "make_synthetic_dataset",
    "make_toy_encoder",
    "pgd",
    "register_backend",
    "register_clean_strategy",
    "run_attack",
    "run_benchmark",
    "save_image",
    "select_confident",
    "sgd_step",
    "similarity_shift",
    "softmax_weights",
    "sweep_padding_size",
    "sweep_threshold",
    "ttp_predict",
    "view_scores",
]
