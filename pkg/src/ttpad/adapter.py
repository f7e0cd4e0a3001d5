"""Augmented views, entropy scoring, confident-subset selection, and the
single-step entropy-minimization update of the trainable padding.

The view family is a simplified, fully seeded stand-in for AugMix-style
chains: random resized crop (area fraction in [0.5, 1.0]), horizontal flip,
and mild brightness/contrast jitter. Selection ranks the UNPADDED views; the
padding parameters only ever see the selected subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .encoders import (
    ClassifierConfig,
    ClassPrototypeSet,
    EncoderHandle,
    ProbabilityVector,
    class_probs_t,
    resize_pixels,
)
from .errors import InvalidArgumentError
from .images import ImageBuffer
from .padding import TrainablePadding, padded_pixels_t, sgd_step

DEFAULT_NUM_VIEWS = 64
DEFAULT_SELECT_FRACTION = 0.1

AugmentFn = Callable[[np.random.Generator, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class AdaptationConfig:
    num_views: int = DEFAULT_NUM_VIEWS
    select_fraction: float = DEFAULT_SELECT_FRACTION
    lr: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.num_views < 1:
            raise InvalidArgumentError("num_views must be >= 1")
        if not (0 < self.select_fraction <= 1):
            raise InvalidArgumentError("select_fraction must lie in (0, 1]")
        if not (self.lr > 0):
            raise InvalidArgumentError("lr must be positive")

    @property
    def num_selected(self) -> int:
        return math.ceil(self.select_fraction * self.num_views)


@dataclass(frozen=True)
class ViewBatch:
    """Views, their unpadded entropies, and the selected confident subset."""

    views: tuple[ImageBuffer, ...]
    entropies: tuple[float, ...]
    selected: tuple[int, ...]

    def __post_init__(self):
        if len(self.views) != len(self.entropies):
            raise InvalidArgumentError("one entropy per view required")
        if not self.selected:
            raise InvalidArgumentError("selected subset must be non-empty")
        if any(not (0 <= i < len(self.views)) for i in self.selected):
            raise InvalidArgumentError("selected indices out of range")


def _random_resized_crop(rng: np.random.Generator, pixels: torch.Tensor) -> torch.Tensor:
    h, w = int(pixels.shape[0]), int(pixels.shape[1])
    for _ in range(10):
        area = rng.uniform(0.5, 1.0) * h * w
        ratio = math.exp(rng.uniform(math.log(3 / 4), math.log(4 / 3)))
        ch = round(math.sqrt(area / ratio))
        cw = round(math.sqrt(area * ratio))
        if 0 < ch <= h and 0 < cw <= w:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            crop = pixels[top : top + ch, left : left + cw, :]
            return resize_pixels(crop, (h, w))
    return pixels


def default_augment(rng: np.random.Generator, pixels: torch.Tensor) -> torch.Tensor:
    """Crop, maybe flip, maybe jitter; output keeps the input size and range."""
    out = _random_resized_crop(rng, pixels)
    if rng.random() < 0.5:
        out = torch.flip(out, dims=[1])
    if rng.random() < 0.5:
        out = out * rng.uniform(0.8, 1.2)
    if rng.random() < 0.5:
        mean = out.mean()
        out = mean + rng.uniform(0.8, 1.2) * (out - mean)
    return torch.clamp(out, 0.0, 255.0)


def generate_views(
    image: ImageBuffer, cfg: AdaptationConfig, augment: AugmentFn | None = None
) -> list[ImageBuffer]:
    """N stochastic views of one image; view 0 is the input itself, untouched."""
    augment = augment or default_augment
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    views = [image]
    for _ in range(cfg.num_views - 1):
        views.append(ImageBuffer(augment(rng, image.pixels)))
    return views


def entropy(p: ProbabilityVector) -> float:
    """Shannon entropy in nats, with 0 * log 0 taken as 0."""
    probs = p.probs
    positive = probs[probs > 0]
    return float(-(positive * torch.log(positive)).sum())


def _entropy_t(probs: torch.Tensor) -> torch.Tensor:
    # differentiable path; softmax outputs are strictly positive
    return -(probs * torch.log(probs)).sum()


def select_confident(entropies: list[float], select_fraction: float) -> tuple[int, ...]:
    """Indices of the ceil(fraction * N) smallest entropies; ties keep the lower index."""
    if len(entropies) == 0:
        raise InvalidArgumentError("entropies must be non-empty")
    if not (0 < select_fraction <= 1):
        raise InvalidArgumentError("select_fraction must lie in (0, 1]")
    k = math.ceil(select_fraction * len(entropies))
    order = np.argsort(np.asarray(entropies), kind="stable")
    return tuple(sorted(int(i) for i in order[:k]))


def adapt_padding(
    enc: EncoderHandle,
    protos: ClassPrototypeSet,
    cfg_classifier: ClassifierConfig,
    adv_image: ImageBuffer,
    cfg: AdaptationConfig,
    pad: TrainablePadding,
    augment: AugmentFn | None = None,
) -> tuple[TrainablePadding, ViewBatch]:
    """One entropy-minimization step of the padding parameters.

    Generates views, ranks them by unpadded prediction entropy, selects the
    confident subset, then applies exactly one SGD step to theta on the mean
    entropy of the padded selected views.
    """
    if (adv_image.height, adv_image.width) != (pad.height, pad.width):
        raise InvalidArgumentError("padding was initialized for a different image size")
    views = generate_views(adv_image, cfg, augment=augment)
    protos_t = protos.prototypes
    with torch.no_grad():
        entropies = [
            float(_entropy_t(class_probs_t(enc.encode(v.pixels), protos_t, cfg_classifier.temperature)))
            for v in views
        ]
    selected = select_confident(entropies, cfg.select_fraction)

    theta = pad.theta.clone().requires_grad_(True)
    per_view = []
    for i in selected:
        padded = padded_pixels_t(views[i].pixels, theta, pad.pad_width, pad.scale)
        probs = class_probs_t(enc.encode(padded), protos_t, cfg_classifier.temperature)
        per_view.append(_entropy_t(probs))
    loss = torch.stack(per_view).mean()
    # an encoder that ignores its input legitimately yields a zero gradient
    if loss.requires_grad:
        (grad,) = torch.autograd.grad(loss, theta, allow_unused=True)
        grad = torch.zeros_like(theta) if grad is None else grad
    else:
        grad = torch.zeros_like(theta)
    updated = sgd_step(pad, grad, cfg.lr)
    return updated, ViewBatch(views=tuple(views), entropies=tuple(entropies), selected=selected)
