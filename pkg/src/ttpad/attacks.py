"""White-box attacks against the zero-shot cosine classifier.

All attacks operate on [0, 255] pixels; perturbation budgets are expressed in
fraction-of-range units (the conventional eps/255), so eps=4/255 bounds the
max-norm perturbation at 4 intensity levels. Core loops are written against a
generic differentiable logits function, which the public operations
instantiate with cos(F(x), g_c) / temperature.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .encoders import ClassifierConfig, ClassPrototypeSet, EncoderHandle, cosine_rows_t
from .errors import InvalidArgumentError
from .images import ImageBuffer

DEFAULT_EPSILON = 4.0 / 255.0
DEFAULT_STEPS = 100
DEFAULT_OVERSHOOT = 0.02
DEFAULT_MARGIN_CONST = 1.0
DEFAULT_CW_LR = 0.01

ATTACK_KINDS = ("fgsm", "pgd", "cw", "deepfool")

LogitsFn = Callable[[torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class AttackConfig:
    """Attack hyperparameters; eps in fraction-of-range units (4/255 by default)."""

    kind: str = "pgd"
    epsilon: float = DEFAULT_EPSILON
    steps: int = DEFAULT_STEPS
    step_size: float | None = None  # pgd: eps/4, cw: 0.01 when unset
    random_start: bool = True
    overshoot: float = DEFAULT_OVERSHOOT
    margin_const: float = DEFAULT_MARGIN_CONST
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise InvalidArgumentError(f"unknown attack kind {self.kind!r}; one of {ATTACK_KINDS}")
        if self.epsilon < 0:
            raise InvalidArgumentError("epsilon must be >= 0")
        if self.steps < 1:
            raise InvalidArgumentError("steps must be >= 1")
        if self.step_size is not None and not (self.step_size > 0):
            raise InvalidArgumentError("step_size must be positive when given")

    @property
    def resolved_step_size(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return self.epsilon / 4.0 if self.kind == "pgd" else DEFAULT_CW_LR

    def config_hash(self) -> str:
        payload = json.dumps(
            {
                "kind": self.kind,
                "epsilon": self.epsilon,
                "steps": self.steps,
                "step_size": self.step_size,
                "random_start": self.random_start,
                "overshoot": self.overshoot,
                "margin_const": self.margin_const,
                "seed": self.seed,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def make_logits_fn(enc: EncoderHandle, protos: ClassPrototypeSet, cfg: ClassifierConfig) -> LogitsFn:
    """Differentiable pixels -> logits map: cosine similarities over temperature."""
    protos_t = protos.prototypes

    def logits_fn(pixels: torch.Tensor) -> torch.Tensor:
        return cosine_rows_t(enc.encode(pixels), protos_t) / cfg.temperature

    return logits_fn


def _check_label(label: int, num_classes: int) -> int:
    if not (0 <= int(label) < num_classes):
        raise InvalidArgumentError(f"label {label} out of range for {num_classes} classes")
    return int(label)


def cross_entropy_loss_grad(logits_fn: LogitsFn, pixels: torch.Tensor, label: int) -> tuple[float, torch.Tensor]:
    """Cross-entropy of the true class and its gradient with respect to pixels."""
    x = pixels.detach().clone().requires_grad_(True)
    logits = logits_fn(x)
    loss = -torch.log_softmax(logits, dim=0)[label]
    if not loss.requires_grad:  # classifier ignores pixels entirely
        return float(loss), torch.zeros_like(x)
    (grad,) = torch.autograd.grad(loss, x, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(x)
    return float(loss.detach()), grad.detach()


def loss_gradient(
    enc: EncoderHandle,
    protos: ClassPrototypeSet,
    cfg_classifier: ClassifierConfig,
    image: ImageBuffer,
    label: int,
) -> torch.Tensor:
    """Gradient of the classification cross-entropy w.r.t. input pixels."""
    label = _check_label(label, protos.num_classes)
    _, grad = cross_entropy_loss_grad(make_logits_fn(enc, protos, cfg_classifier), image.pixels, label)
    return grad


def _fgsm_core(logits_fn: LogitsFn, pixels: torch.Tensor, label: int, eps_px: float) -> torch.Tensor:
    _, grad = cross_entropy_loss_grad(logits_fn, pixels, label)
    return torch.clamp(pixels + eps_px * torch.sign(grad), 0.0, 255.0)


def _pgd_core(
    logits_fn: LogitsFn,
    pixels: torch.Tensor,
    label: int,
    eps_px: float,
    step_px: float,
    steps: int,
    random_start: bool,
    seed: int,
) -> torch.Tensor:
    x0 = pixels.detach()
    if random_start and eps_px > 0:
        rng = np.random.Generator(np.random.PCG64(seed))
        start = torch.as_tensor(rng.uniform(-eps_px, eps_px, size=tuple(x0.shape)))
        x = torch.clamp(x0 + start, 0.0, 255.0)
    else:
        x = x0.clone()
    for _ in range(steps):
        _, grad = cross_entropy_loss_grad(logits_fn, x, label)
        x = x + step_px * torch.sign(grad)
        x = x0 + torch.clamp(x - x0, -eps_px, eps_px)
        x = torch.clamp(x, 0.0, 255.0)
    return x


def _cw_core(
    logits_fn: LogitsFn,
    pixels: torch.Tensor,
    label: int,
    steps: int,
    lr: float,
    margin_const: float,
) -> torch.Tensor:
    """Descend max(margin, 0) + c * ||delta||_2^2, tracking the best iterate.

    The margin is logit_true - max logit_other, the quadratic penalty uses
    delta in fraction-of-range units, and there is no epsilon ball.
    """
    x0 = pixels.detach()
    delta = torch.zeros_like(x0, requires_grad=True)

    def objective(d: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x_cand = torch.clamp(x0 + 255.0 * d, 0.0, 255.0)
        logits = logits_fn(x_cand)
        others = logits.clone()
        others[label] = -torch.inf
        margin = logits[label] - others.max()
        quad = margin_const * torch.sum(((x_cand - x0) / 255.0) ** 2)
        return torch.clamp(margin, min=0.0) + quad, x_cand

    best_obj, best_x = None, None
    for _ in range(steps):
        obj, x_cand = objective(delta)
        if best_obj is None or float(obj.detach()) < best_obj:
            best_obj, best_x = float(obj.detach()), x_cand.detach()
        (grad,) = torch.autograd.grad(obj, delta)
        with torch.no_grad():
            delta = (delta - lr * grad).detach().requires_grad_(True)
    with torch.no_grad():
        obj, x_cand = objective(delta)
    if float(obj) < best_obj:
        best_x = x_cand.detach()
    return best_x


def _class_gradients(logits_fn: LogitsFn, pixels: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Logit values and per-class pixel gradients at one point."""
    x = pixels.detach().clone().requires_grad_(True)
    logits = logits_fn(x)
    n = int(logits.numel())
    grads = []
    for c in range(n):
        if not logits.requires_grad:
            grads.append(torch.zeros_like(x))
            continue
        (g,) = torch.autograd.grad(logits[c], x, retain_graph=(c < n - 1), allow_unused=True)
        grads.append(torch.zeros_like(x) if g is None else g.detach())
    return logits.detach(), grads


def _deepfool_core(
    logits_fn: LogitsFn,
    pixels: torch.Tensor,
    label: int,
    max_steps: int,
    overshoot: float,
) -> torch.Tensor:
    """Iterative linearized minimal-perturbation attack.

    At each iterate the nearest linearized decision boundary is computed and
    stepped to; the loop ends when the (overshot) prediction flips away from
    the label or the step cap is hit. The accumulated perturbation is applied
    scaled by (1 + overshoot).
    """
    x0 = pixels.detach()
    r_total = torch.zeros_like(x0)
    for _ in range(max_steps):
        x_i = x0 + (1.0 + overshoot) * r_total
        logits, grads = _class_gradients(logits_fn, x_i)
        if int(torch.argmax(logits)) != label:
            break
        best_ratio, best_step = None, None
        for c in range(len(grads)):
            if c == label:
                continue
            w_c = grads[c] - grads[label]
            f_c = float(logits[c] - logits[label])
            w_norm = float(torch.linalg.vector_norm(w_c))
            if w_norm < 1e-12:
                continue
            ratio = abs(f_c) / w_norm
            if best_ratio is None or ratio < best_ratio:
                best_ratio = ratio
                best_step = (abs(f_c) / w_norm**2) * w_c
        if best_step is None:  # no usable boundary direction; give up
            break
        r_total = r_total + best_step
    return torch.clamp(x0 + (1.0 + overshoot) * r_total, 0.0, 255.0)


def fgsm(
    enc: EncoderHandle,
    protos: ClassPrototypeSet,
    cfg_classifier: ClassifierConfig,
    image: ImageBuffer,
    true_label: int,
    eps: float = DEFAULT_EPSILON,
) -> ImageBuffer:
    """Single signed-gradient ascent step on the cross-entropy, clamped to range."""
    if eps < 0:
        raise InvalidArgumentError("eps must be >= 0")
    label = _check_label(true_label, protos.num_classes)
    logits_fn = make_logits_fn(enc, protos, cfg_classifier)
    return ImageBuffer(_fgsm_core(logits_fn, image.pixels, label, eps * 255.0))


def pgd(
    enc: EncoderHandle,
    protos: ClassPrototypeSet,
    cfg_classifier: ClassifierConfig,
    image: ImageBuffer,
    true_label: int,
    cfg: AttackConfig,
) -> ImageBuffer:
    """Iterated signed-gradient ascent with projection onto the eps max-norm ball."""
    if cfg.kind != "pgd":
        raise InvalidArgumentError(f"AttackConfig.kind is {cfg.kind!r}, expected 'pgd'")
    label = _check_label(true_label, protos.num_classes)
    logits_fn = make_logits_fn(enc, protos, cfg_classifier)
    out = _pgd_core(
        logits_fn,
        image.pixels,
        label,
        eps_px=cfg.epsilon * 255.0,
        step_px=cfg.resolved_step_size * 255.0,
        steps=cfg.steps,
        random_start=cfg.random_start,
        seed=cfg.seed,
    )
    return ImageBuffer(out)


def cw(
    enc: EncoderHandle,
    protos: ClassPrototypeSet,
    cfg_classifier: ClassifierConfig,
    image: ImageBuffer,
    true_label: int,
    cfg: AttackConfig,
) -> ImageBuffer:
    """Margin-objective attack with a fixed trade-off constant and best-iterate tracking."""
    if cfg.kind != "cw":
        raise InvalidArgumentError(f"AttackConfig.kind is {cfg.kind!r}, expected 'cw'")
    label = _check_label(true_label, protos.num_classes)
    logits_fn = make_logits_fn(enc, protos, cfg_classifier)
    out = _cw_core(
        logits_fn,
        image.pixels,
        label,
        steps=cfg.steps,
        lr=cfg.resolved_step_size,
        margin_const=cfg.margin_const,
    )
    return ImageBuffer(out)


def deepfool(
    enc: EncoderHandle,
    protos: ClassPrototypeSet,
    cfg_classifier: ClassifierConfig,
    image: ImageBuffer,
    true_label: int,
    cfg: AttackConfig,
) -> ImageBuffer:
    """Minimal-perturbation attack via iterated boundary linearization."""
    if cfg.kind != "deepfool":
        raise InvalidArgumentError(f"AttackConfig.kind is {cfg.kind!r}, expected 'deepfool'")
    label = _check_label(true_label, protos.num_classes)
    logits_fn = make_logits_fn(enc, protos, cfg_classifier)
    return ImageBuffer(_deepfool_core(logits_fn, image.pixels, label, cfg.steps, cfg.overshoot))


def run_attack(
    enc: EncoderHandle,
    protos: ClassPrototypeSet,
    cfg_classifier: ClassifierConfig,
    image: ImageBuffer,
    true_label: int,
    cfg: AttackConfig,
) -> ImageBuffer:
    """Dispatch on cfg.kind."""
    if cfg.kind == "fgsm":
        return fgsm(enc, protos, cfg_classifier, image, true_label, cfg.epsilon)
    if cfg.kind == "pgd":
        return pgd(enc, protos, cfg_classifier, image, true_label, cfg)
    if cfg.kind == "cw":
        return cw(enc, protos, cfg_classifier, image, true_label, cfg)
    return deepfool(enc, protos, cfg_classifier, image, true_label, cfg)
