import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ttpad.errors import InvalidArgumentError
from ttpad.images import image_from_array
from ttpad.padding import (
    PaddingPattern,
    PatternKind,
    TrainablePadding,
    apply_fixed_padding,
    apply_trainable_padding,
    border_count,
    init_trainable_padding,
    sgd_step,
)

from conftest import make_image


class TestFixedPadding:
    def test_output_size_224_pad_32(self, rng):
        img = make_image(rng, 224, 224)
        out = apply_fixed_padding(img, PaddingPattern(PatternKind.ZERO), 32)
        assert (out.height, out.width) == (288, 288)
        assert torch.equal(out.pixels[32:256, 32:256], img.pixels)

    @pytest.mark.parametrize("kind,value", [(PatternKind.ZERO, 0.0), (PatternKind.WHITE, 255.0)])
    def test_uniform_patterns_fill_border(self, rng, kind, value):
        img = make_image(rng, 8, 8, lo=1.0, hi=254.0)
        out = apply_fixed_padding(img, PaddingPattern(kind), 3)
        border = out.pixels.clone()
        border[3:11, 3:11] = value  # blank the center, then everything must equal the fill
        assert torch.equal(border, torch.full_like(border, value))

    def test_zero_width_is_identity(self, rng):
        img = make_image(rng)
        assert apply_fixed_padding(img, PaddingPattern(), 0) == img

    def test_random_pattern_seeded_and_integer_valued(self, rng):
        img = make_image(rng, 6, 6)
        pat = PaddingPattern(PatternKind.RANDOM, seed=42)
        a = apply_fixed_padding(img, pat, 2)
        b = apply_fixed_padding(img, pat, 2)
        assert a == b
        c = apply_fixed_padding(img, PaddingPattern(PatternKind.RANDOM, seed=43), 2)
        assert not torch.equal(a.pixels, c.pixels)
        border_vals = a.pixels[0]  # first row is pure border
        assert torch.equal(border_vals, border_vals.round())
        assert float(border_vals.min()) >= 0 and float(border_vals.max()) <= 255

    def test_negative_width_rejected(self, rng):
        with pytest.raises(InvalidArgumentError):
            apply_fixed_padding(make_image(rng), PaddingPattern(), -1)

    @given(st.integers(2, 10), st.integers(2, 10), st.integers(0, 4))
    @settings(max_examples=30, deadline=None)
    def test_center_always_preserved(self, h, w, pad):
        rng = np.random.Generator(np.random.PCG64(h * 100 + w * 10 + pad))
        img = image_from_array(rng.uniform(0, 255, (h, w, 3)))
        out = apply_fixed_padding(img, PaddingPattern(PatternKind.RANDOM, seed=0), pad)
        assert torch.equal(out.pixels[pad : pad + h, pad : pad + w], img.pixels)


class TestInitTrainablePadding:
    def test_entries_in_range_and_seeded(self):
        a = init_trainable_padding(4, (16, 16), seed=5)
        b = init_trainable_padding(4, (16, 16), seed=5)
        assert torch.equal(a.theta, b.theta)
        assert float(a.theta.min()) >= 0.0 and float(a.theta.max()) <= 10.0
        c = init_trainable_padding(4, (16, 16), seed=6)
        assert not torch.equal(a.theta, c.theta)

    def test_parameter_count_224_pad_32(self):
        pad = init_trainable_padding(32, (224, 224), seed=0)
        assert pad.parameter_count == (288**2 - 224**2) * 3 == 98304

    def test_zero_width_rejected(self):
        with pytest.raises(InvalidArgumentError):
            init_trainable_padding(0, (16, 16), seed=0)

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 3))
    @settings(max_examples=40, deadline=None)
    def test_parameter_count_formula(self, h, w, pad):
        expected = ((h + 2 * pad) * (w + 2 * pad) - h * w) * 3
        assert border_count(h, w, pad) * 3 == expected
        assert init_trainable_padding(pad, (h, w), 0).parameter_count == expected

    def test_exhaustive_small_case(self):
        # H = W = 4, w = 1: (36 - 16) * 3 = 60
        assert init_trainable_padding(1, (4, 4), 0).parameter_count == 60


class TestApplyTrainablePadding:
    def test_zero_theta_equals_zero_pattern(self, rng):
        img = make_image(rng, 6, 6)
        pad = TrainablePadding(torch.zeros(border_count(6, 6, 2), 3), 2, 6, 6)
        trained = apply_trainable_padding(img, pad)
        fixed = apply_fixed_padding(img, PaddingPattern(PatternKind.ZERO), 2)
        assert trained == fixed

    def test_theta_ten_saturates_white(self, rng):
        img = make_image(rng, 6, 6)
        n = border_count(6, 6, 2)
        pad = TrainablePadding(torch.full((n, 3), 10.0), 2, 6, 6)
        out = apply_trainable_padding(img, pad)
        fixed = apply_fixed_padding(img, PaddingPattern(PatternKind.WHITE), 2)
        assert out == fixed  # clamp(10 * 25.5) = 255

    def test_center_preserved_and_range_clamped(self, rng):
        img = make_image(rng, 5, 7)
        n = border_count(5, 7, 3)
        theta = torch.as_tensor(rng.uniform(-50, 50, (n, 3)))
        pad = TrainablePadding(theta, 3, 5, 7)
        out = apply_trainable_padding(img, pad)
        assert torch.equal(out.pixels[3:8, 3:10], img.pixels)
        assert float(out.pixels.min()) >= 0.0 and float(out.pixels.max()) <= 255.0

    def test_border_derivative_equals_scale(self, rng):
        # finite differences on the public op: d(border pixel)/d(theta) = 25.5
        img = make_image(rng, 4, 4)
        pad = init_trainable_padding(1, (4, 4), seed=9)
        k = 7  # an arbitrary border entry with 0 < theta * 25.5 < 255
        assert 0.0 < float(pad.theta[k, 1]) * 25.5 < 255.0
        h = 1e-4
        up, down = pad.theta.clone(), pad.theta.clone()
        up[k, 1] += h
        down[k, 1] -= h
        out_up = apply_trainable_padding(img, TrainablePadding(up, 1, 4, 4))
        out_down = apply_trainable_padding(img, TrainablePadding(down, 1, 4, 4))
        diff = (out_up.pixels - out_down.pixels) / (2 * h)
        assert abs(float(diff.abs().max()) - 25.5) < 1e-6
        assert int((diff.abs() > 1e-12).sum()) == 1  # only that one pixel channel moves

    def test_size_mismatch_rejected(self, rng):
        pad = init_trainable_padding(2, (6, 6), seed=0)
        with pytest.raises(InvalidArgumentError):
            apply_trainable_padding(make_image(rng, 8, 8), pad)

    def test_wrong_theta_shape_rejected(self):
        with pytest.raises(InvalidArgumentError):
            TrainablePadding(torch.zeros(5, 3), 1, 4, 4)


class TestSgdStep:
    def test_arithmetic(self):
        pad = init_trainable_padding(1, (4, 4), seed=0)
        theta = pad.theta.clone()
        theta[0, 0] = 5.0
        pad = TrainablePadding(theta, 1, 4, 4)
        grad = torch.zeros_like(theta)
        grad[0, 0] = 0.2
        out = sgd_step(pad, grad, lr=5.0)
        assert float(out.theta[0, 0]) == 4.0
        assert torch.equal(out.theta[1:], pad.theta[1:])

    def test_zero_grad_fixed_point(self):
        pad = init_trainable_padding(2, (5, 5), seed=1)
        out = sgd_step(pad, torch.zeros_like(pad.theta), lr=5.0)
        assert torch.equal(out.theta, pad.theta)
        assert out is not pad  # immutable snapshot semantics

    def test_default_lr_is_five(self):
        import inspect

        assert inspect.signature(sgd_step).parameters["lr"].default == 5.0

    def test_shape_mismatch(self):
        pad = init_trainable_padding(1, (4, 4), seed=0)
        with pytest.raises(InvalidArgumentError):
            sgd_step(pad, torch.zeros(3, 3), lr=5.0)

    def test_non_finite_grad_rejected(self):
        pad = init_trainable_padding(1, (4, 4), seed=0)
        bad = torch.zeros_like(pad.theta)
        bad[0, 0] = float("inf")
        with pytest.raises(InvalidArgumentError):
            sgd_step(pad, bad, lr=5.0)
