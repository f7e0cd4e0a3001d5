"""Detect-then-adapt orchestration: route each input through the clean branch
or the padding-adaptation branch, and aggregate the final prediction.

Per sample: measure the padding similarity shift, compare against the
threshold, and either classify directly (clean) or run the one-step padding
adaptation followed by the similarity-aware ensemble (adversarial). Samples
are fully independent; the trainable padding is re-initialized per sample.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .adapter import AdaptationConfig, ViewBatch, adapt_padding
from .detector import DetectorConfig, Verdict, detect, similarity_shift_from_embedding
from .encoders import (
    ClassifierConfig,
    ClassPrototypeSet,
    EncoderHandle,
    Embedding,
    ProbabilityVector,
    classify,
    encode_image,
)
from .ensemble import aggregate_prediction, softmax_weights, view_scores
from .errors import ConfigurationError, InvalidArgumentError
from .images import ImageBuffer
from .padding import DEFAULT_PAD_WIDTH, apply_trainable_padding, init_trainable_padding

logger = logging.getLogger(__name__)

DEFAULT_CLEAN_STRATEGY = "zero-shot"

CleanStrategy = Callable[
    [EncoderHandle, ClassPrototypeSet, ClassifierConfig, ImageBuffer], ProbabilityVector
]

_CLEAN_STRATEGIES: dict[str, CleanStrategy] = {}


def register_clean_strategy(strategy_id: str, fn: CleanStrategy) -> None:
    """Register a post-detection strategy for clean-detected samples."""
    _CLEAN_STRATEGIES[strategy_id] = fn


def run_clean_strategy(
    strategy_id: str,
    enc: EncoderHandle,
    protos: ClassPrototypeSet,
    image: ImageBuffer,
    cfg_classifier: ClassifierConfig | None = None,
) -> ProbabilityVector:
    """Dispatch a clean-detected image to the registered strategy."""
    fn = _CLEAN_STRATEGIES.get(strategy_id)
    if fn is None:
        raise ConfigurationError(f"unknown clean-branch strategy {strategy_id!r}")
    return fn(enc, protos, cfg_classifier or ClassifierConfig(), image)


def _zero_shot_strategy(
    enc: EncoderHandle,
    protos: ClassPrototypeSet,
    cfg_classifier: ClassifierConfig,
    image: ImageBuffer,
) -> ProbabilityVector:
    return classify(encode_image(enc, image), protos, cfg_classifier)


register_clean_strategy(DEFAULT_CLEAN_STRATEGY, _zero_shot_strategy)


@dataclass(frozen=True)
class TtpConfig:
    """Aggregated configuration for the full detect-then-adapt pipeline."""

    detector: DetectorConfig = field(default_factory=DetectorConfig)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    pad_width: int = DEFAULT_PAD_WIDTH
    clean_branch_hook: str | None = None

    def __post_init__(self):
        if self.pad_width < 1:
            raise InvalidArgumentError("pad_width must be >= 1")
        # fail fast: an unknown strategy should never survive config load
        if self.clean_branch_hook is not None and self.clean_branch_hook not in _CLEAN_STRATEGIES:
            raise ConfigurationError(
                f"unknown clean-branch strategy {self.clean_branch_hook!r}; "
                f"registered: {sorted(_CLEAN_STRATEGIES)}"
            )


@dataclass(frozen=True)
class PredictionOutcome:
    """Per-sample result of the pipeline, with routing diagnostics."""

    predicted_class: int
    verdict: Verdict
    similarity: float
    mixture: ProbabilityVector | None
    selected_view_count: int
    adaptation_steps: int
    wall_time: float
    entropies: tuple[float, ...] = ()
    degraded: bool = False

    def same_prediction(self, other: "PredictionOutcome") -> bool:
        """Field equality ignoring the wall clock."""
        mix_a = None if self.mixture is None else self.mixture.probs
        mix_b = None if other.mixture is None else other.mixture.probs
        mix_equal = (mix_a is None) == (mix_b is None) and (
            mix_a is None or torch.equal(mix_a, mix_b)
        )
        return (
            self.predicted_class == other.predicted_class
            and self.verdict == other.verdict
            and self.similarity == other.similarity
            and mix_equal
            and self.selected_view_count == other.selected_view_count
            and self.adaptation_steps == other.adaptation_steps
            and self.entropies == other.entropies
            and self.degraded == other.degraded
        )


def _spawn_seeds(seed: int, n: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1)[0]) for c in children]


def _adversarial_branch(
    enc: EncoderHandle,
    protos: ClassPrototypeSet,
    cfg: TtpConfig,
    image: ImageBuffer,
    z: Embedding,
    seed: int,
) -> tuple[int, ProbabilityVector, ViewBatch]:
    pad_seed, view_seed = _spawn_seeds(seed, 2)
    pad = init_trainable_padding(cfg.pad_width, (image.height, image.width), pad_seed)
    adapt_cfg = AdaptationConfig(
        num_views=cfg.adaptation.num_views,
        select_fraction=cfg.adaptation.select_fraction,
        lr=cfg.adaptation.lr,
        seed=view_seed,
    )
    pad, batch = adapt_padding(enc, protos, cfg.classifier, image, adapt_cfg, pad)

    z_adv_pad = encode_image(enc, apply_trainable_padding(image, pad))
    padded_views = [
        apply_trainable_padding(batch.views[i], pad) for i in batch.selected
    ]
    embeddings = [encode_image(enc, pv) for pv in padded_views]
    probs = [classify(emb, protos, cfg.classifier) for emb in embeddings]
    scores = view_scores(embeddings, z, z_adv_pad)
    weights = softmax_weights([s.score for s in scores])
    predicted, mixture = aggregate_prediction(weights, probs)
    return predicted, mixture, batch


def ttp_predict(
    enc: EncoderHandle,
    protos: ClassPrototypeSet,
    cfg: TtpConfig,
    image: ImageBuffer,
    seed: int = 0,
) -> PredictionOutcome:
    """Run the full detect-then-adapt pipeline on one image."""
    start = time.perf_counter()
    z = encode_image(enc, image)
    similarity = similarity_shift_from_embedding(enc, image, z, cfg.detector)
    verdict = detect(similarity, cfg.detector)

    if verdict.is_clean:
        if cfg.clean_branch_hook is None or cfg.clean_branch_hook == DEFAULT_CLEAN_STRATEGY:
            probs = classify(z, protos, cfg.classifier)  # reuse the detection embedding
        else:
            probs = run_clean_strategy(cfg.clean_branch_hook, enc, protos, image, cfg.classifier)
        return PredictionOutcome(
            predicted_class=probs.argmax(),
            verdict=verdict,
            similarity=similarity,
            mixture=None,
            selected_view_count=0,
            adaptation_steps=0,
            wall_time=time.perf_counter() - start,
        )

    try:
        predicted, mixture, batch = _adversarial_branch(enc, protos, cfg, image, z, seed)
        return PredictionOutcome(
            predicted_class=predicted,
            verdict=verdict,
            similarity=similarity,
            mixture=mixture,
            selected_view_count=len(batch.selected),
            adaptation_steps=1,
            wall_time=time.perf_counter() - start,
            entropies=batch.entropies,
        )
    except Exception:
        logger.warning("adaptation failed; degrading to zero-shot prediction", exc_info=True)
        probs = classify(z, protos, cfg.classifier)
        return PredictionOutcome(
            predicted_class=probs.argmax(),
            verdict=verdict,
            similarity=similarity,
            mixture=None,
            selected_view_count=0,
            adaptation_steps=0,
            wall_time=time.perf_counter() - start,
            degraded=True,
        )


def batch_predict(
    enc: EncoderHandle,
    protos: ClassPrototypeSet,
    cfg: TtpConfig,
    images: list[ImageBuffer],
    seeds: list[int],
) -> list[PredictionOutcome | None]:
    """Elementwise ttp_predict; failed items yield None and the batch continues."""
    if len(images) != len(seeds):
        raise InvalidArgumentError(f"{len(images)} images but {len(seeds)} seeds")
    outcomes: list[PredictionOutcome | None] = []
    for image, seed in zip(images, seeds):
        try:
            outcomes.append(ttp_predict(enc, protos, cfg, image, seed))
        except Exception:
            logger.warning("prediction failed for one batch item", exc_info=True)
            outcomes.append(None)
    return outcomes
