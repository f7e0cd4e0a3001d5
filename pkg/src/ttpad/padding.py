"""Fixed padding patterns for detection and the trainable border-pixel module.

Trainable padding keeps one parameter per border pixel per channel; the pixel
value is clamp(theta * scale, 0, 255) with scale 25.5 so the documented init
range [0, 10] spans the full intensity range. Updates are single plain SGD
steps and instances are immutable snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidArgumentError
from .images import ImageBuffer

THETA_SCALE = 25.5  # 255 / 10: theta in [0, 10] maps onto pixel values [0, 255]
DEFAULT_PAD_WIDTH = 32
DEFAULT_PAD_LR = 5.0


class PatternKind(str, Enum):
    ZERO = "zero"
    WHITE = "white"
    RANDOM = "random"


@dataclass(frozen=True)
class PaddingPattern:
    """A fixed border fill: all-zero, all-white, or seeded uniform random."""

    kind: PatternKind = PatternKind.ZERO
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PatternKind(self.kind))


def border_indices(height: int, width: int, pad_width: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Row/col coordinates of the border band on the padded canvas, row-major order."""
    h2, w2 = height + 2 * pad_width, width + 2 * pad_width
    mask = np.ones((h2, w2), dtype=bool)
    mask[pad_width : pad_width + height, pad_width : pad_width + width] = False
    rows, cols = np.nonzero(mask)
    return torch.as_tensor(rows), torch.as_tensor(cols)


def border_count(height: int, width: int, pad_width: int) -> int:
    h2, w2 = height + 2 * pad_width, width + 2 * pad_width
    return h2 * w2 - height * width


@dataclass(frozen=True)
class TrainablePadding:
    """Per-instance border parameters theta for a fixed target image size."""

    theta: torch.Tensor  # (n_border, 3), float64
    pad_width: int
    height: int
    width: int
    scale: float = THETA_SCALE

    def __post_init__(self):
        th = self.theta
        if not torch.is_tensor(th):
            th = torch.as_tensor(np.asarray(th, dtype=np.float64))
        th = th.detach().to(torch.float64)
        if self.pad_width < 1:
            raise InvalidArgumentError("pad_width must be >= 1 for trainable padding")
        if not (self.scale > 0):
            raise InvalidArgumentError("scale must be positive")
        expected = border_count(self.height, self.width, self.pad_width)
        if th.shape != (expected, 3):
            raise InvalidArgumentError(
                f"theta shape {tuple(th.shape)} != ({expected}, 3) for "
                f"{self.height}x{self.width} target with pad width {self.pad_width}"
            )
        if not torch.isfinite(th).all():
            raise InvalidArgumentError("theta contains non-finite values")
        object.__setattr__(self, "theta", th)

    @property
    def parameter_count(self) -> int:
        return int(self.theta.numel())


def _center_canvas(pixels: torch.Tensor, pad_width: int) -> torch.Tensor:
    # zero-pad the image into the canvas center; exact copy, differentiable
    return F.pad(pixels.permute(2, 0, 1), (pad_width,) * 4).permute(1, 2, 0)


def apply_fixed_padding(image: ImageBuffer, pattern: PaddingPattern, pad_width: int) -> ImageBuffer:
    """Surround the image with a fixed border; pad_width 0 is the identity."""
    if pad_width < 0:
        raise InvalidArgumentError("pad_width must be >= 0")
    if pad_width == 0:
        return image
    h, w = image.height, image.width
    canvas = _center_canvas(image.pixels, pad_width)
    ri, ci = border_indices(h, w, pad_width)
    if pattern.kind is PatternKind.ZERO:
        fill = torch.zeros(ri.numel(), 3, dtype=torch.float64)
    elif pattern.kind is PatternKind.WHITE:
        fill = torch.full((ri.numel(), 3), 255.0, dtype=torch.float64)
    else:
        rng = np.random.Generator(np.random.PCG64(pattern.seed))
        fill = torch.as_tensor(rng.integers(0, 256, size=(ri.numel(), 3)).astype(np.float64))
    return ImageBuffer(canvas.index_put((ri, ci), fill))


def init_trainable_padding(pad_width: int, target_size: tuple[int, int], seed: int) -> TrainablePadding:
    """Fresh instance-specific padding, theta ~ U[0, 10] i.i.d., seeded."""
    if pad_width < 1:
        raise InvalidArgumentError("pad_width must be >= 1 (nothing to train otherwise)")
    height, width = int(target_size[0]), int(target_size[1])
    if height < 1 or width < 1:
        raise InvalidArgumentError("target size must be positive")
    n = border_count(height, width, pad_width)
    rng = np.random.Generator(np.random.PCG64(seed))
    theta = torch.as_tensor(rng.uniform(0.0, 10.0, size=(n, 3)))
    return TrainablePadding(theta=theta, pad_width=pad_width, height=height, width=width)


def padded_pixels_t(pixels: torch.Tensor, theta: torch.Tensor, pad_width: int, scale: float) -> torch.Tensor:
    """Differentiable padded canvas: center copy of pixels, border clamp(theta*scale, 0, 255).

    Differentiable in both the image and theta; the theta derivative equals
    ``scale`` wherever the clamp is inactive.
    """
    center = _center_canvas(pixels, pad_width)
    ri, ci = border_indices(int(pixels.shape[0]), int(pixels.shape[1]), pad_width)
    return center.index_put((ri, ci), torch.clamp(theta * scale, 0.0, 255.0))


def apply_trainable_padding(image: ImageBuffer, pad: TrainablePadding) -> ImageBuffer:
    """Apply the padding module to an image matching its target size."""
    if (image.height, image.width) != (pad.height, pad.width):
        raise InvalidArgumentError(
            f"image {image.height}x{image.width} does not match padding target "
            f"{pad.height}x{pad.width}"
        )
    with torch.no_grad():
        out = padded_pixels_t(image.pixels, pad.theta, pad.pad_width, pad.scale)
    return ImageBuffer(out)


def sgd_step(pad: TrainablePadding, grad: torch.Tensor, lr: float = DEFAULT_PAD_LR) -> TrainablePadding:
    """One plain gradient step theta' = theta - lr * grad; returns a new snapshot."""
    if not torch.is_tensor(grad):
        grad = torch.as_tensor(np.asarray(grad, dtype=np.float64))
    grad = grad.detach().to(torch.float64)
    if grad.shape != pad.theta.shape:
        raise InvalidArgumentError(f"grad shape {tuple(grad.shape)} != theta shape {tuple(pad.theta.shape)}")
    if not torch.isfinite(grad).all():
        raise InvalidArgumentError("grad contains non-finite values")
    if not (lr > 0):
        raise InvalidArgumentError("lr must be positive")
    return replace(pad, theta=pad.theta - lr * grad)
