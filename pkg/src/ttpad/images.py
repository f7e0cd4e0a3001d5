"""Image container and lossless PNG round-trips.

All pixel data in this package lives in H x W x 3 float64 tensors with values
in [0, 255]; encoders are responsible for any resizing/normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class ImageBuffer:
    """An H x W x 3 image with pixel intensities in [0, 255]."""

    pixels: torch.Tensor

    def __post_init__(self):
        px = self.pixels
        if not torch.is_tensor(px):
            px = torch.as_tensor(np.asarray(px), dtype=torch.float64)
        px = px.detach().to(torch.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidArgumentError(f"expected H x W x 3 pixels, got shape {tuple(px.shape)}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidArgumentError("image dimensions must be positive")
        if not torch.isfinite(px).all():
            raise InvalidArgumentError("pixels contain non-finite values")
        if px.min() < 0.0 or px.max() > 255.0:
            raise InvalidArgumentError(
                f"pixels outside [0, 255]: min={px.min().item():.4g} max={px.max().item():.4g}"
            )
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    def numpy(self) -> np.ndarray:
        return self.pixels.numpy().copy()

    def __eq__(self, other) -> bool:
        return isinstance(other, ImageBuffer) and torch.equal(self.pixels, other.pixels)


def image_from_array(arr) -> ImageBuffer:
    """Build an ImageBuffer from any array-like in [0, 255]."""
    return ImageBuffer(torch.as_tensor(np.asarray(arr, dtype=np.float64)))


def load_image(path: str | Path) -> ImageBuffer:
    """Load an RGB image file into an ImageBuffer."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return image_from_array(arr)


def save_image(image: ImageBuffer, path: str | Path) -> None:
    """Save as 8-bit PNG (lossless format; float pixels are rounded to integers)."""
    arr = np.clip(np.rint(image.numpy()), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
