"""Encoder abstraction, zero-shot cosine classifier, and the deterministic toy backend.

The toy encoder exists so the whole pipeline (attacks, detection, padding
adaptation) can run and be gradient-checked offline: it is smooth everywhere
(area-average downsample -> fixed random linear map -> tanh), seeded, and
differentiable with respect to input pixels through torch autograd.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DegenerateInputError, InvalidArgumentError
from .images import ImageBuffer

DEFAULT_TEMPLATE = "a photo of a [CLASS]"
CLASS_PLACEHOLDER = "[CLASS]"


@dataclass(frozen=True)
class Embedding:
    """A d-dimensional feature vector produced by an image or text encoder."""

    values: torch.Tensor

    def __post_init__(self):
        v = self.values
        if not torch.is_tensor(v):
            v = torch.as_tensor(np.asarray(v, dtype=np.float64))
        v = v.detach().to(torch.float64).reshape(-1)
        if v.numel() < 1:
            raise InvalidArgumentError("embedding must be non-empty")
        if not torch.isfinite(v).all():
            raise InvalidArgumentError("embedding contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return int(self.values.numel())


@dataclass(frozen=True)
class ClassPrototypeSet:
    """C x d matrix of text-derived class embeddings, row order = class order."""

    prototypes: torch.Tensor
    class_names: tuple[str, ...]
    template: str

    def __post_init__(self):
        protos = self.prototypes
        if not torch.is_tensor(protos):
            protos = torch.as_tensor(np.asarray(protos, dtype=np.float64))
        protos = protos.detach().to(torch.float64)
        names = tuple(self.class_names)
        if protos.ndim != 2:
            raise InvalidArgumentError("prototypes must be a C x d matrix")
        if protos.shape[0] != len(names):
            raise InvalidArgumentError(
                f"{protos.shape[0]} prototype rows for {len(names)} class names"
            )
        if not torch.isfinite(protos).all():
            raise InvalidArgumentError("prototypes contain non-finite values")
        object.__setattr__(self, "prototypes", protos)
        object.__setattr__(self, "class_names", names)

    @property
    def num_classes(self) -> int:
        return int(self.prototypes.shape[0])

    @property
    def dim(self) -> int:
        return int(self.prototypes.shape[1])


@dataclass(frozen=True)
class ProbabilityVector:
    """A C-dimensional probability distribution over classes."""

    probs: torch.Tensor

    def __post_init__(self):
        p = self.probs
        if not torch.is_tensor(p):
            p = torch.as_tensor(np.asarray(p, dtype=np.float64))
        p = p.detach().to(torch.float64).reshape(-1)
        if p.numel() < 1:
            raise InvalidArgumentError("probability vector must be non-empty")
        if not torch.isfinite(p).all():
            raise InvalidArgumentError("probabilities contain non-finite values")
        if p.min() < 0.0 or p.max() > 1.0:
            raise InvalidArgumentError("probabilities must lie in [0, 1]")
        if abs(float(p.sum()) - 1.0) > 1e-6:
            raise InvalidArgumentError(f"probabilities sum to {float(p.sum())!r}, not 1")
        object.__setattr__(self, "probs", p)

    @property
    def num_classes(self) -> int:
        return int(self.probs.numel())

    def argmax(self) -> int:
        # ties broken by lowest class index (torch.argmax picks the first max)
        return int(torch.argmax(self.probs))


@dataclass(frozen=True)
class ClassifierConfig:
    """Softmax temperature for the zero-shot classifier (0.01 by default)."""

    temperature: float = 0.01

    def __post_init__(self):
        if not (self.temperature > 0):
            raise InvalidArgumentError("temperature must be positive")


@dataclass
class EncoderStats:
    """Instrumentation counters; best-effort under concurrent use."""

    encode_calls: int = 0
    grad_encode_calls: int = 0

    def snapshot(self) -> tuple[int, int]:
        return (self.encode_calls, self.grad_encode_calls)


@dataclass
class EncoderHandle:
    """A frozen encoder pair: differentiable image tower and a text tower.

    ``image_encoder`` maps an (H, W, 3) float64 pixel tensor in [0, 255] to a
    (d,) embedding tensor and must be autograd-differentiable; resizing to
    ``input_resolution`` happens inside the call. The handle is read-only
    after construction and safe to share across workers (the stats counters
    are diagnostics, not synchronization).
    """

    image_encoder: Callable[[torch.Tensor], torch.Tensor]
    text_encoder: Callable[[str], torch.Tensor]
    input_resolution: int
    embed_dim: int
    name: str = "custom"
    stats: EncoderStats = field(default_factory=EncoderStats)

    def encode(self, pixels: torch.Tensor) -> torch.Tensor:
        """Tensor-level encode used by gradient-bearing code paths."""
        self.stats.encode_calls += 1
        if torch.is_grad_enabled() and pixels.requires_grad:
            self.stats.grad_encode_calls += 1
        return self.image_encoder(pixels)


def resize_pixels(pixels: torch.Tensor, size: int | tuple[int, int], mode: str = "bilinear") -> torch.Tensor:
    """Resize an (H, W, 3) pixel tensor to the target (height, width); differentiable."""
    target = (size, size) if isinstance(size, int) else (int(size[0]), int(size[1]))
    batched = pixels.permute(2, 0, 1).unsqueeze(0)
    if mode == "nearest":
        out = F.interpolate(batched, size=target, mode="nearest")
    else:
        out = F.interpolate(batched, size=target, mode="bilinear", align_corners=False)
    return out.squeeze(0).permute(1, 2, 0)


def _text_unit_vector(seed: int, embed_dim: int, text: str) -> np.ndarray:
    # stable across processes: entropy from sha256, not the salted builtin hash
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    words = np.frombuffer(digest, dtype=np.uint32)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & 0xFFFFFFFF, *words])))
    v = rng.standard_normal(embed_dim)
    norm = np.linalg.norm(v)
    while norm == 0.0:  # astronomically unlikely; regenerate rather than divide by zero
        v = rng.standard_normal(embed_dim)
        norm = np.linalg.norm(v)
    return v / norm


def make_toy_encoder(seed: int, embed_dim: int = 32, input_resolution: int = 224) -> EncoderHandle:
    """Deterministic, everywhere-differentiable desk-scale encoder.

    Image tower: pixels/255 -> bilinear resize to the input resolution ->
    16 x 16 area-average downsample -> flatten -> seeded fixed linear map ->
    tanh. Text tower: stable hash of the string -> seeded random unit vector.
    """
    if embed_dim < 2:
        raise InvalidArgumentError("embed_dim must be >= 2")
    if input_resolution < 8:
        raise InvalidArgumentError("input_resolution must be >= 8")
    rng = np.random.Generator(np.random.PCG64(seed))
    n_in = 16 * 16 * 3
    weight = torch.as_tensor(rng.standard_normal((embed_dim, n_in)) / np.sqrt(n_in))

    def image_encoder(pixels: torch.Tensor) -> torch.Tensor:
        x = pixels.to(torch.float64) / 255.0
        x = resize_pixels(x, input_resolution)
        x = F.adaptive_avg_pool2d(x.permute(2, 0, 1).unsqueeze(0), (16, 16))
        return torch.tanh(weight @ x.reshape(-1))

    def text_encoder(text: str) -> torch.Tensor:
        return torch.as_tensor(_text_unit_vector(seed, embed_dim, text))

    return EncoderHandle(
        image_encoder=image_encoder,
        text_encoder=text_encoder,
        input_resolution=input_resolution,
        embed_dim=embed_dim,
        name=f"toy(seed={seed},d={embed_dim},res={input_resolution})",
    )


def encode_image(enc: EncoderHandle, image: ImageBuffer) -> Embedding:
    """Encode an image to its feature vector (deterministic, gradient-free)."""
    if not torch.isfinite(image.pixels).all():
        raise InvalidArgumentError("pixels contain non-finite values")
    with torch.no_grad():
        out = enc.encode(image.pixels)
    return Embedding(out)


def encode_text_prototypes(
    enc: EncoderHandle, class_names: list[str], template: str = DEFAULT_TEMPLATE
) -> ClassPrototypeSet:
    """Build the C x d class prototype matrix from a prompt template."""
    if not class_names:
        raise InvalidArgumentError("class_names must be non-empty")
    if template.count(CLASS_PLACEHOLDER) != 1:
        raise InvalidArgumentError(
            f"template must contain exactly one {CLASS_PLACEHOLDER} placeholder: {template!r}"
        )
    if len(set(class_names)) != len(class_names):
        warnings.warn("duplicate class names in prototype set", stacklevel=2)
    rows = [enc.text_encoder(template.replace(CLASS_PLACEHOLDER, name)) for name in class_names]
    return ClassPrototypeSet(torch.stack([torch.as_tensor(r) for r in rows]), tuple(class_names), template)


def cosine_rows_t(emb: torch.Tensor, protos: torch.Tensor) -> torch.Tensor:
    """Differentiable cosine similarity of one embedding against each prototype row."""
    enorm = torch.linalg.vector_norm(emb)
    pnorm = torch.linalg.vector_norm(protos, dim=1)
    if float(enorm.detach()) == 0.0 or bool((pnorm.detach() == 0).any()):
        raise DegenerateInputError("zero-norm vector in cosine similarity")
    return (protos @ emb) / (pnorm * enorm)


def class_probs_t(emb: torch.Tensor, protos: torch.Tensor, temperature: float) -> torch.Tensor:
    """Differentiable softmax over cosine similarities, stabilized by max-subtraction."""
    logits = cosine_rows_t(emb, protos) / temperature
    shifted = logits - logits.max()
    expd = torch.exp(shifted)
    return expd / expd.sum()


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Cosine similarity of two embeddings, clamped to [-1, 1] against rounding."""
    va, vb = a.values, b.values
    if va.numel() != vb.numel():
        raise InvalidArgumentError(f"dim mismatch: {va.numel()} vs {vb.numel()}")
    na, nb = float(torch.linalg.vector_norm(va)), float(torch.linalg.vector_norm(vb))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("zero-norm embedding in cosine similarity")
    if torch.equal(va, vb):
        return 1.0  # identical vectors are exactly parallel; skip the rounding noise
    return float(torch.clamp(torch.dot(va, vb) / (na * nb), -1.0, 1.0))


def classify(f: Embedding, protos: ClassPrototypeSet, cfg: ClassifierConfig | None = None) -> ProbabilityVector:
    """Zero-shot class probabilities: softmax over cosine similarities / temperature."""
    cfg = cfg or ClassifierConfig()
    if f.dim != protos.dim:
        raise InvalidArgumentError(f"embedding dim {f.dim} != prototype dim {protos.dim}")
    with torch.no_grad():
        p = class_probs_t(f.values, protos.prototypes, cfg.temperature)
    return ProbabilityVector(p)


# --- backend adapter registry -------------------------------------------------
#
# A backend factory takes the identifier string that selected it and returns an
# EncoderHandle exposing the same four capabilities as the toy backend. Real
# pretrained towers plug in here; nothing in the pipeline cares which is used.

_BACKENDS: dict[str, Callable[[str], EncoderHandle]] = {}


def register_backend(name: str, factory: Callable[[str], EncoderHandle]) -> None:
    _BACKENDS[name] = factory


def make_backend(identifier: str) -> EncoderHandle:
    """Resolve a backend id like ``toy`` or ``toy:seed=7,dim=64,res=96``."""
    head, _, tail = identifier.partition(":")
    factory = _BACKENDS.get(head)
    if factory is None:
        from .errors import ConfigurationError

        raise ConfigurationError(
            f"unknown encoder backend {head!r}; registered: {sorted(_BACKENDS)}"
        )
    return factory(tail)


def _toy_factory(args: str) -> EncoderHandle:
    kwargs = {"seed": 0, "dim": 32, "res": 64}
    if args:
        for part in args.split(","):
            key, _, value = part.partition("=")
            key = key.strip()
            if key not in kwargs:
                raise InvalidArgumentError(f"unknown toy backend option {key!r}")
            kwargs[key] = int(value)
    return make_toy_encoder(kwargs["seed"], embed_dim=kwargs["dim"], input_resolution=kwargs["res"])


register_backend("toy", _toy_factory)
