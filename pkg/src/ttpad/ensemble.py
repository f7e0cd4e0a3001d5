"""Similarity-aware weighting of padded views and the aggregated prediction.

Each padded view is scored by how close it sits to the padded adversarial
embedding (alpha) minus how close it sits to the raw adversarial embedding
(beta); a softmax over the scores weights the per-view class probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from .encoders import Embedding, ProbabilityVector, cosine_similarity
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class ViewScore:
    alpha: float
    beta: float
    score: float
    weight: float | None = None


def view_scores(
    padded_view_embeddings: list[Embedding], z_adv: Embedding, z_adv_pad: Embedding
) -> list[ViewScore]:
    """Score each padded view embedding; weights are left unset here.

    alpha = cos(view, padded adversarial), beta = cos(view, raw adversarial),
    score = alpha - beta. ``z_adv_pad`` must come from the TRAINED padding.
    """
    if not padded_view_embeddings:
        raise InvalidArgumentError("need at least one view embedding")
    scores = []
    for emb in padded_view_embeddings:
        alpha = cosine_similarity(emb, z_adv_pad)
        beta = cosine_similarity(emb, z_adv)
        scores.append(ViewScore(alpha=alpha, beta=beta, score=alpha - beta))
    return scores


def softmax_weights(scores: list[float]) -> list[float]:
    """Standard softmax with max-subtraction; output sums to 1."""
    if len(scores) == 0:
        raise InvalidArgumentError("scores must be non-empty")
    t = torch.as_tensor([float(s) for s in scores], dtype=torch.float64)
    if not torch.isfinite(t).all():
        raise InvalidArgumentError("scores contain non-finite values")
    shifted = t - t.max()
    expd = torch.exp(shifted)
    return (expd / expd.sum()).tolist()


def attach_weights(scores: list[ViewScore]) -> list[ViewScore]:
    """Fill in the softmax weights of a scored batch."""
    weights = softmax_weights([s.score for s in scores])
    return [replace(s, weight=w) for s, w in zip(scores, weights)]


def aggregate_prediction(
    weights: list[float], view_probs: list[ProbabilityVector]
) -> tuple[int, ProbabilityVector]:
    """Weighted mixture of per-view probabilities and its argmax (ties: lowest index)."""
    if len(weights) != len(view_probs):
        raise InvalidArgumentError(
            f"{len(weights)} weights for {len(view_probs)} probability vectors"
        )
    if len(weights) == 0:
        raise InvalidArgumentError("nothing to aggregate")
    w = torch.as_tensor(weights, dtype=torch.float64)
    if abs(float(w.sum()) - 1.0) > 1e-6:
        raise InvalidArgumentError(f"weights sum to {float(w.sum())!r}, not 1")
    stacked = torch.stack([p.probs for p in view_probs])
    mixture = (w.unsqueeze(1) * stacked).sum(dim=0)
    # renormalization only absorbs float dust; the mixture is already convex
    mixture = mixture / mixture.sum()
    result = ProbabilityVector(mixture)
    return result.argmax(), result
