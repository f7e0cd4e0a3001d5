import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ttpad.adapter import (
    AdaptationConfig,
    adapt_padding,
    entropy,
    generate_views,
    select_confident,
)
from ttpad.encoders import ClassifierConfig, ProbabilityVector, classify, encode_image, encode_text_prototypes
from ttpad.errors import InvalidArgumentError
from ttpad.padding import TrainablePadding, apply_trainable_padding, init_trainable_padding
import ttpad.adapter as adapter_mod

from conftest import constant_encoder, make_image


class TestGenerateViews:
    def test_default_view_count(self):
        assert AdaptationConfig().num_views == 64
        assert AdaptationConfig().select_fraction == 0.1
        assert AdaptationConfig().lr == 5.0

    def test_view_zero_is_input_bit_exact(self, rng):
        img = make_image(rng, 20, 20)
        views = generate_views(img, AdaptationConfig(num_views=8, seed=4))
        assert views[0] is img or torch.equal(views[0].pixels, img.pixels)
        assert len(views) == 8

    def test_same_seed_identical_batches(self, rng):
        img = make_image(rng, 20, 20)
        cfg = AdaptationConfig(num_views=6, seed=12)
        a = generate_views(img, cfg)
        b = generate_views(img, cfg)
        assert all(torch.equal(x.pixels, y.pixels) for x, y in zip(a, b))
        c = generate_views(img, AdaptationConfig(num_views=6, seed=13))
        assert any(not torch.equal(x.pixels, y.pixels) for x, y in zip(a, c))

    def test_views_keep_size_and_range(self, rng):
        img = make_image(rng, 18, 14)
        for v in generate_views(img, AdaptationConfig(num_views=10, seed=0)):
            assert (v.height, v.width) == (18, 14)
            assert float(v.pixels.min()) >= 0.0 and float(v.pixels.max()) <= 255.0

    def test_custom_augment_plugged_in(self, rng):
        img = make_image(rng, 8, 8)
        flips = []

        def my_augment(gen, pixels):
            flips.append(True)
            return torch.flip(pixels, dims=[0])

        views = generate_views(img, AdaptationConfig(num_views=3, seed=0), augment=my_augment)
        assert len(flips) == 2  # view 0 stays untouched
        assert torch.equal(views[1].pixels, torch.flip(img.pixels, dims=[0]))


class TestEntropy:
    def test_uniform_ten_classes(self):
        p = ProbabilityVector([0.1] * 10)
        assert abs(entropy(p) - math.log(10)) < 1e-9

    def test_one_hot_zero(self):
        assert entropy(ProbabilityVector([0.0, 1.0, 0.0])) == 0.0

    def test_half_half(self):
        assert abs(entropy(ProbabilityVector([0.5, 0.5])) - math.log(2)) < 1e-9

    @given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=20))
    @settings(max_examples=60, deadline=None)
    def test_bounded_by_log_c(self, raw):
        weights = np.asarray(raw)
        p = ProbabilityVector(weights / weights.sum())
        h = entropy(p)
        c = len(raw)
        assert -1e-12 <= h <= math.log(c) + 1e-9
        uniform = ProbabilityVector(np.full(c, 1.0 / c))
        assert abs(entropy(uniform) - math.log(c)) < 1e-9


class TestSelectConfident:
    def test_sort_oracle(self):
        assert select_confident([0.1, 0.9, 0.2, 0.8], 0.5) == (0, 2)

    def test_full_selection(self):
        assert select_confident([0.3, 0.1, 0.2], 1.0) == (0, 1, 2)

    def test_tie_prefers_lower_index(self):
        assert select_confident([0.5, 0.5], 0.5) == (0,)

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            select_confident([], 0.5)

    @given(st.lists(st.floats(0, 5), min_size=1, max_size=24), st.floats(0.05, 1.0))
    @settings(max_examples=60, deadline=None)
    def test_selection_correctness(self, ents, frac):
        chosen = select_confident(ents, frac)
        assert len(chosen) == math.ceil(frac * len(ents))
        inside = [ents[i] for i in chosen]
        outside = [ents[i] for i in range(len(ents)) if i not in chosen]
        if outside:
            assert max(inside) <= min(outside)


@pytest.fixture
def adapt_setup(small_enc, rng):
    protos = encode_text_prototypes(small_enc, ["ant", "bee", "cow"])
    img = make_image(rng, 12, 12)
    pad = init_trainable_padding(2, (12, 12), seed=21)
    return small_enc, protos, ClassifierConfig(), img, pad


def forward_entropy_loss(enc, protos, ccfg, views, selected, pad: TrainablePadding) -> float:
    """Gradient-free recomputation of the adaptation objective via public ops."""
    total = 0.0
    for i in selected:
        padded = apply_trainable_padding(views[i], pad)
        total += entropy(classify(encode_image(enc, padded), protos, ccfg))
    return total / len(selected)


class TestAdaptPadding:
    def test_constant_stub_leaves_theta_unchanged(self, rng):
        enc = constant_encoder([0.2, 0.9, -0.4])
        from ttpad.encoders import ClassPrototypeSet

        protos = ClassPrototypeSet(np.eye(3), ("a", "b", "c"), "a photo of a [CLASS]")
        img = make_image(rng, 10, 10)
        pad = init_trainable_padding(2, (10, 10), seed=0)
        cfg = AdaptationConfig(num_views=4, select_fraction=0.5, lr=5.0, seed=1)
        updated, _ = adapt_padding(enc, protos, ClassifierConfig(), img, cfg, pad)
        assert torch.equal(updated.theta, pad.theta)

    def test_single_update_per_call(self, adapt_setup, monkeypatch):
        enc, protos, ccfg, img, pad = adapt_setup
        calls = []
        real_step = adapter_mod.sgd_step

        def counting_step(p, g, lr):
            calls.append(1)
            return real_step(p, g, lr)

        monkeypatch.setattr(adapter_mod, "sgd_step", counting_step)
        adapt_padding(enc, protos, ccfg, img, AdaptationConfig(num_views=4, select_fraction=0.5, seed=2), pad)
        assert len(calls) == 1

    def test_descent_with_small_probe_lr(self, adapt_setup):
        enc, protos, ccfg, img, pad = adapt_setup
        cfg = AdaptationConfig(num_views=6, select_fraction=0.5, lr=1e-3, seed=5)
        updated, batch = adapt_padding(enc, protos, ccfg, img, cfg, pad)
        grad_norm = float(torch.linalg.vector_norm(pad.theta - updated.theta)) / cfg.lr
        assert grad_norm > 1e-10  # loss actually depends on theta here
        before = forward_entropy_loss(enc, protos, ccfg, batch.views, batch.selected, pad)
        after = forward_entropy_loss(enc, protos, ccfg, batch.views, batch.selected, updated)
        assert after < before

    def test_gradient_matches_finite_differences(self, adapt_setup, rng):
        enc, protos, ccfg, img, pad = adapt_setup
        cfg = AdaptationConfig(num_views=4, select_fraction=0.5, lr=1.0, seed=7)
        updated, batch = adapt_padding(enc, protos, ccfg, img, cfg, pad)
        grad = (pad.theta - updated.theta) / cfg.lr  # exact recovery at lr = 1

        h = 1e-4
        flat_idx = [int(i) for i in rng.choice(pad.theta.numel(), size=5, replace=False)]
        for fi in flat_idx:
            r, c = divmod(fi, 3)
            if not (0.05 < float(pad.theta[r, c]) < 9.95):  # stay clamp-inactive
                continue
            up, down = pad.theta.clone(), pad.theta.clone()
            up[r, c] += h
            down[r, c] -= h
            f_up = forward_entropy_loss(
                enc, protos, ccfg, batch.views, batch.selected,
                TrainablePadding(up, pad.pad_width, pad.height, pad.width),
            )
            f_down = forward_entropy_loss(
                enc, protos, ccfg, batch.views, batch.selected,
                TrainablePadding(down, pad.pad_width, pad.height, pad.width),
            )
            fd = (f_up - f_down) / (2 * h)
            got = float(grad[r, c])
            assert abs(got - fd) <= 1e-4 * max(abs(got), abs(fd), 1e-6)

    def test_selection_happens_before_any_padded_encoding(self, adapt_setup):
        enc, protos, ccfg, img, pad = adapt_setup
        shapes = []
        inner = enc.image_encoder

        def recording(pixels):
            shapes.append(tuple(pixels.shape[:2]))
            return inner(pixels)

        patched = type(enc)(
            image_encoder=recording,
            text_encoder=enc.text_encoder,
            input_resolution=enc.input_resolution,
            embed_dim=enc.embed_dim,
        )
        cfg = AdaptationConfig(num_views=5, select_fraction=0.4, seed=3)
        adapt_padding(patched, protos, ccfg, img, cfg, pad)
        unpadded = (img.height, img.width)
        padded = (img.height + 2 * pad.pad_width, img.width + 2 * pad.pad_width)
        first_padded = shapes.index(padded)
        assert shapes[:first_padded] == [unpadded] * cfg.num_views  # all rankings first

    def test_batch_bookkeeping(self, adapt_setup):
        enc, protos, ccfg, img, pad = adapt_setup
        cfg = AdaptationConfig(num_views=10, select_fraction=0.25, seed=9)
        _, batch = adapt_padding(enc, protos, ccfg, img, cfg, pad)
        assert len(batch.views) == 10
        assert len(batch.selected) == math.ceil(0.25 * 10)
        inside = [batch.entropies[i] for i in batch.selected]
        outside = [batch.entropies[i] for i in range(10) if i not in batch.selected]
        assert max(inside) <= min(outside)

    def test_size_mismatch_rejected(self, adapt_setup, rng):
        enc, protos, ccfg, _, pad = adapt_setup
        with pytest.raises(InvalidArgumentError):
            adapt_padding(enc, protos, ccfg, make_image(rng, 9, 9), AdaptationConfig(num_views=2), pad)
