"""Shared fixtures and independent numerical oracles.

The finite-difference helpers here are deliberately implemented against the
gradient-free public API so they stay independent of the autograd paths they
are used to check.
"""

from __future__ import annotations

import numpy as np
import pytest
import torch

from ttpad.encoders import EncoderHandle, make_toy_encoder
from ttpad.images import ImageBuffer, image_from_array


def make_image(rng: np.random.Generator, h: int = 16, w: int = 16, lo: float = 0.0, hi: float = 255.0) -> ImageBuffer:
    return image_from_array(rng.uniform(lo, hi, size=(h, w, 3)))


def constant_encoder(vector, input_resolution: int = 16) -> EncoderHandle:
    """Test double: every image maps to the same embedding (zero gradient)."""
    v = torch.as_tensor(np.asarray(vector, dtype=np.float64))

    def image_encoder(pixels: torch.Tensor) -> torch.Tensor:
        return v.clone()

    def text_encoder(text: str) -> torch.Tensor:
        out = torch.zeros_like(v)
        out[hash(text) % v.numel()] = 1.0
        return out

    return EncoderHandle(
        image_encoder=image_encoder,
        text_encoder=text_encoder,
        input_resolution=input_resolution,
        embed_dim=int(v.numel()),
        name="constant-stub",
    )


def central_difference(f, x: torch.Tensor, indices, h: float) -> dict:
    """Central finite differences of a scalar function at selected flat indices."""
    grads = {}
    flat = x.reshape(-1)
    for idx in indices:
        bumped = flat.clone()
        bumped[idx] = flat[idx] + h
        f_plus = f(bumped.reshape(x.shape))
        bumped[idx] = flat[idx] - h
        f_minus = f(bumped.reshape(x.shape))
        grads[int(idx)] = (f_plus - f_minus) / (2.0 * h)
    return grads


def assert_close_rel(actual: float, expected: float, rel: float = 1e-4, floor: float = 1e-8) -> None:
    err = abs(actual - expected)
    scale = max(abs(actual), abs(expected), floor)
    assert err / scale < rel, f"|{actual} - {expected}| rel err {err / scale:.3g} >= {rel}"


@pytest.fixture(scope="session")
def toy_enc() -> EncoderHandle:
    return make_toy_encoder(seed=0, embed_dim=32, input_resolution=32)


@pytest.fixture(scope="session")
def small_enc() -> EncoderHandle:
    # tiny resolution keeps finite-difference sweeps cheap
    return make_toy_encoder(seed=3, embed_dim=16, input_resolution=16)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(1234))
