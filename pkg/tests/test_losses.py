import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiva.finite_diff import numeric_grad, rel_error
from shiva.losses import (CompositeLossWeights, captured_signal_loss, composite_loss, mse_loss,
                          normalized_distillation, sparsity_penalty)
from shiva.numeric import DimensionError, make_rng


class TestDistillation:
    def test_identical(self):
        h = make_rng(0).normal(size=(4, 6))
        loss, grad = normalized_distillation(h, h)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_per_token_affine_invariance(self):
        rng = make_rng(1)
        for _ in range(50):
            ht = rng.normal(size=(6, 8))
            a = rng.uniform(0.2, 5.0, size=(6, 1))
            b = rng.normal(size=(6, 1)) * 3
            assert normalized_distillation(a * ht + b, ht)[0] < 1e-8

    def test_symmetric_value(self):
        rng = make_rng(2)
        a, b = rng.normal(size=(2, 5, 4))
        assert normalized_distillation(a, b)[0] == pytest.approx(normalized_distillation(b, a)[0], rel=1e-14)

    def test_finite_differences(self):
        rng = make_rng(3)
        hs, ht = rng.normal(size=(2, 3, 5))
        num = numeric_grad(lambda: normalized_distillation(hs, ht)[0], hs, 1e-6)
        assert rel_error(normalized_distillation(hs, ht)[1], num) < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            normalized_distillation(np.zeros((2, 3)), np.zeros((3, 3)))

    @settings(max_examples=50)
    @given(st.integers(0, 10_000))
    def test_non_negative(self, seed):
        hs, ht = make_rng(seed).normal(size=(2, 3, 4))
        assert normalized_distillation(hs, ht)[0] >= 0.0


class TestSparsity:
    def test_zero_weight(self):
        assert sparsity_penalty(17.0, 0.0) == (0.0, 0.0)

    def test_linear(self):
        loss, grad = sparsity_penalty(50.0, 0.1)
        assert loss == pytest.approx(5.0) and grad == 0.1

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            sparsity_penalty(3.0, -0.1)

    def test_equilibrium_sits_on_signal_count(self):
        """Sweeping k over a frozen ordering (signal tokens first): the captured
        signal minus the penalty is minimal where the signal runs out."""
        rng = make_rng(4)
        n_signal, n, d = 20, 100, 16
        x = np.concatenate([10 + rng.normal(size=(n_signal, d)), rng.normal(size=(n - n_signal, d))])
        totals = [captured_signal_loss(x[:k])[0] + sparsity_penalty(k, 0.1)[0] for k in range(1, n + 1)]
        assert abs(int(np.argmin(totals)) + 1 - n_signal) <= 3


class TestComposite:
    def test_weights_zero(self):
        assert composite_loss(1.5, 3.0, 7.0, CompositeLossWeights(0.0, 0.0)) == 1.5

    def test_linear(self):
        w = CompositeLossWeights(2.0, 0.5)
        assert composite_loss(1.0, 3.0, 4.0, w) == 1.0 + 6.0 + 2.0

    def test_negative_weights(self):
        with pytest.raises(ValueError):
            CompositeLossWeights(-1.0, 0.0)

    def test_gradient_is_weighted_sum(self):
        rng = make_rng(5)
        y, target, teacher = rng.normal(size=(3, 4, 5))
        w = CompositeLossWeights(lambda_b=0.7, lambda_d=0.3)

        def total():
            return composite_loss(mse_loss(y, target)[0], sparsity_penalty(float(y.sum()), 1.0)[0],
                                  normalized_distillation(y, teacher)[0], w)

        ana = (mse_loss(y, target)[1] + w.lambda_b * np.ones_like(y)
               + w.lambda_d * normalized_distillation(y, teacher)[1])
        assert rel_error(ana, numeric_grad(total, y, 1e-6)) < 1e-5


def test_mse():
    loss, grad = mse_loss([[1.0, 3.0]], [[0.0, 0.0]])
    assert loss == 5.0
    np.testing.assert_array_equal(grad, [[1.0, 3.0]])


def test_captured_signal_gradient():
    x = make_rng(6).normal(size=(3, 4))
    loss, grad = captured_signal_loss(x)
    assert loss == pytest.approx(-x.sum() / 4)
    assert rel_error(grad, numeric_grad(lambda: captured_signal_loss(x)[0], x)) < 1e-6
