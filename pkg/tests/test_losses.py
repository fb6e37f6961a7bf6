"""Loss values and gradients: hand-evaluated cases, then properties."""

import math

import numpy as np
import pytest

from mprl.errors import InvalidClass, InvalidDimension
from mprl.labels import TiePolicy, ground_truth_label, lsro_label, mprl_alpha, mprl_label, softmax
from mprl.losses import (
    GradientMode,
    LossConfig,
    combined_loss,
    log_sum_exp,
    lsro_loss,
    mprl_generated_loss,
    real_ce_loss,
)

LN2 = math.log(2.0)


def fd_gradient(fn, x, step=1e-6):
    grad = np.empty_like(x)
    for j in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        grad[j] = (fn(xp) - fn(xm)) / (2 * step)
    return grad


class TestRealCeLoss:
    def test_symmetric_two_class(self):
        out = real_ce_loss([0.0, 0.0], 1)
        assert abs(out.value - LN2) < 1e-15
        np.testing.assert_allclose(out.grad_logits, [0.5, -0.5], atol=1e-15)

    def test_ln3_case(self):
        # p = [3/4, 1/4]; loss on the dominant class
        out = real_ce_loss([math.log(3.0), 0.0], 0)
        assert abs(out.value - math.log(4.0 / 3.0)) < 1e-12
        np.testing.assert_allclose(out.grad_logits, [-0.25, 0.25], atol=1e-12)

    def test_large_margin_drives_loss_to_zero(self):
        out = real_ce_loss([50.0, 0.0, 0.0], 0)
        assert 0.0 <= out.value < 1e-20

    def test_class_out_of_range(self):
        with pytest.raises(InvalidClass):
            real_ce_loss([0.0, 0.0], 2)
        with pytest.raises(InvalidClass):
            real_ce_loss([0.0, 0.0], -1)


class TestLsroLoss:
    def test_uniform_target_matches_uniform_probs(self):
        out = lsro_loss([0.0, 0.0])
        assert abs(out.value - LN2) < 1e-15
        np.testing.assert_array_equal(out.grad_logits, [0.0, 0.0])

    def test_ln2_case(self):
        out = lsro_loss([0.0, LN2])
        assert abs(out.value - (-LN2 / 2 + math.log(3.0))) < 1e-12
        np.testing.assert_allclose(out.grad_logits, [-1 / 6, 1 / 6], atol=1e-12)

    def test_constant_logits_zero_gradient(self):
        for c in [-7.5, 0.0, 3.25, 100.0]:
            out = lsro_loss([c] * 5)
            np.testing.assert_array_equal(out.grad_logits, np.zeros(5))

    def test_gradient_sums_to_zero(self):
        rng = np.random.default_rng(1)
        for k in [2, 5, 751]:
            out = lsro_loss(rng.normal(0, 3, size=k))
            assert abs(out.grad_logits.sum()) < 1e-12


class TestMprlGeneratedLoss:
    def test_tie_case_equals_lsro_value(self):
        cfg = LossConfig(n_classes=2, gen_weight=1.0)
        alpha = mprl_alpha([0.5, 0.5], TiePolicy.AVERAGE_RANK)
        out = mprl_generated_loss([0.0, 0.0], alpha, cfg)
        assert abs(out.value - LN2) < 1e-12

    def test_analytic_gradient_vanishes_at_matched_probs(self):
        # p = [1/3, 2/3] matches the normalized rank target exactly
        cfg = LossConfig(n_classes=2, gen_weight=1.0, gradient_mode=GradientMode.ANALYTIC)
        alpha = mprl_alpha(softmax([0.0, LN2]), TiePolicy.AVERAGE_RANK)
        np.testing.assert_array_equal(alpha.ranks, [1.0, 2.0])
        out = mprl_generated_loss([0.0, LN2], alpha, cfg)
        np.testing.assert_allclose(out.grad_logits, [0.0, 0.0], atol=1e-12)

    def test_diagonal_gradient_differs_from_derivative(self):
        # same point as above: the diagonal formula gives [-2/9, -2/9]
        cfg = LossConfig(n_classes=2, gen_weight=1.0, gradient_mode=GradientMode.DIAGONAL)
        alpha = mprl_alpha(softmax([0.0, LN2]), TiePolicy.AVERAGE_RANK)
        out = mprl_generated_loss([0.0, LN2], alpha, cfg)
        np.testing.assert_allclose(out.grad_logits, [-2 / 9, -2 / 9], atol=1e-12)

    def test_diagonal_strictly_negative_analytic_sums_to_zero(self):
        rng = np.random.default_rng(4)
        for k in [2, 5, 10, 751]:
            x = rng.normal(0, 3, size=k)
            alpha = mprl_alpha(softmax(x), TiePolicy.AVERAGE_RANK)
            diag = mprl_generated_loss(
                x, alpha, LossConfig(k, gradient_mode=GradientMode.DIAGONAL))
            assert np.all(diag.grad_logits < 0.0)
            analytic = mprl_generated_loss(
                x, alpha, LossConfig(k, gradient_mode=GradientMode.ANALYTIC))
            assert abs(analytic.grad_logits.sum()) < 1e-12

    def test_degenerates_to_lsro_on_uniform_probs(self):
        rng = np.random.default_rng(9)
        for k in [2, 10, 100]:
            cfg = LossConfig(n_classes=k, gen_weight=1.0)
            for _ in range(30):
                x = np.full(k, rng.uniform(-50.0, 50.0))
                alpha = mprl_alpha(softmax(x), TiePolicy.AVERAGE_RANK)
                assert abs(
                    mprl_generated_loss(x, alpha, cfg).value - lsro_loss(x).value
                ) < 1e-12

    def test_gen_weight_scales_linearly_and_doubling_is_exact(self):
        x = np.array([0.4, -1.2, 2.0])
        alpha = mprl_alpha(softmax(x), TiePolicy.AVERAGE_RANK)
        lo = mprl_generated_loss(x, alpha, LossConfig(3, gen_weight=0.35))
        hi = mprl_generated_loss(x, alpha, LossConfig(3, gen_weight=0.70))
        assert hi.value == 2.0 * lo.value
        np.testing.assert_array_equal(hi.grad_logits, 2.0 * lo.grad_logits)

    def test_dimension_mismatch(self):
        alpha = mprl_alpha([0.5, 0.5], TiePolicy.AVERAGE_RANK)
        with pytest.raises(InvalidDimension):
            mprl_generated_loss([0.0, 0.0, 0.0], alpha, LossConfig(3))


class TestShiftInvariance:
    def test_all_losses_shift_invariant(self):
        rng = np.random.default_rng(14)
        cfg = LossConfig(n_classes=6, gen_weight=0.7)
        for _ in range(40):
            x = rng.normal(0, 3, size=6)
            shift = rng.uniform(-50, 50)
            alpha = mprl_alpha(softmax(x), TiePolicy.AVERAGE_RANK)
            for fn in (
                lambda z: real_ce_loss(z, 2),
                lsro_loss,
                lambda z: mprl_generated_loss(z, alpha, cfg),
            ):
                a, b = fn(x), fn(x + shift)
                assert abs(a.value - b.value) < 1e-10
                np.testing.assert_allclose(a.grad_logits, b.grad_logits, atol=1e-12)


class TestFiniteDifferences:
    def test_analytic_gradients_match_central_differences(self):
        rng = np.random.default_rng(100)
        for k in [2, 5, 10]:
            cfg = LossConfig(n_classes=k)
            for _ in range(30):
                x = rng.normal(0, 3, size=k)
                c = int(rng.integers(k))
                alpha = mprl_alpha(softmax(x), TiePolicy.AVERAGE_RANK)
                cases = [
                    (real_ce_loss(x, c).grad_logits, lambda z: real_ce_loss(z, c).value),
                    (lsro_loss(x).grad_logits, lambda z: lsro_loss(z).value),
                    (
                        mprl_generated_loss(x, alpha, cfg).grad_logits,
                        lambda z: mprl_generated_loss(z, alpha, cfg).value,
                    ),
                ]
                for analytic, fn in cases:
                    fd = fd_gradient(fn, x)
                    scale = max(np.abs(analytic).max(), np.abs(fd).max(), 1e-12)
                    assert np.abs(analytic - fd).max() / scale < 1e-6


class TestCombinedLoss:
    def test_real_only_batch_equals_mean_ce(self):
        cfg = LossConfig(n_classes=3)
        rng = np.random.default_rng(21)
        items = []
        expected = []
        for _ in range(5):
            x = rng.normal(0, 2, size=3)
            c = int(rng.integers(3)) + 1
            items.append((x, ground_truth_label(c, 3), False))
            expected.append(real_ce_loss(x, c - 1).value)
        out = combined_loss(items, cfg)
        assert abs(out.value - np.mean(expected)) < 1e-12
        assert out.n_generated == 0 and out.gen_loss == 0.0

    def test_gate_inactive_zeroes_generated_contribution(self):
        cfg = LossConfig(n_classes=2, gen_weight=0.1)
        items = [
            (np.array([0.3, -0.2]), ground_truth_label(1, 2), False),
            (np.array([1.0, 2.0]), lsro_label(2), True),
        ]
        gated = combined_loss(items, cfg, gate_active=False)
        assert gated.gen_loss == 0.0
        assert gated.value == gated.real_loss
        np.testing.assert_array_equal(gated.grad_logits[1], np.zeros(2))

    def test_hand_composed_aggregate(self):
        # one real two-class sample at the decision boundary plus one
        # tied-rank generated sample: ln2 + 0.1 * ln2
        cfg = LossConfig(n_classes=2, gen_weight=0.1)
        alpha = mprl_alpha([0.5, 0.5], TiePolicy.AVERAGE_RANK)
        items = [
            (np.array([0.0, 0.0]), ground_truth_label(2, 2), False),
            (np.array([0.0, 0.0]), mprl_label(alpha, 2), True),
        ]
        out = combined_loss(items, cfg, gate_active=True)
        assert abs(out.value - (LN2 + 0.1 * LN2)) < 1e-12
        assert abs(out.real_loss - LN2) < 1e-15
        assert abs(out.gen_loss - LN2) < 1e-12

    def test_gradients_route_back_per_sample(self):
        cfg = LossConfig(n_classes=2, gen_weight=0.5)
        x_real = np.array([0.7, -0.1])
        x_gen = np.array([0.2, 0.9])
        alpha = mprl_alpha(softmax(x_gen), TiePolicy.AVERAGE_RANK)
        items = [
            (x_real, ground_truth_label(1, 2), False),
            (x_gen, mprl_label(alpha, 2), True),
        ]
        out = combined_loss(items, cfg)
        np.testing.assert_allclose(
            out.grad_logits[0], real_ce_loss(x_real, 0).grad_logits, atol=1e-15
        )
        expected_gen = mprl_generated_loss(x_gen, alpha, cfg).grad_logits
        np.testing.assert_allclose(out.grad_logits[1], expected_gen, atol=1e-15)

    def test_mean_reduction_keeps_gen_weight_meaning(self):
        # duplicating the generated side must not change the aggregate
        cfg = LossConfig(n_classes=2, gen_weight=0.1)
        real = (np.array([0.0, 0.0]), ground_truth_label(1, 2), False)
        gen = (np.array([0.3, 0.8]), lsro_label(2), True)
        single = combined_loss([real, gen], cfg)
        doubled = combined_loss([real, gen, gen], cfg)
        assert abs(single.value - doubled.value) < 1e-15

    def test_mixed_width_rejected(self):
        cfg = LossConfig(n_classes=3)
        items = [
            (np.zeros(3), ground_truth_label(1, 3), False),
            (np.zeros(4), lsro_label(4), True),
        ]
        with pytest.raises(InvalidDimension):
            combined_loss(items, cfg)

    def test_real_item_requires_ground_truth_label(self):
        cfg = LossConfig(n_classes=2)
        with pytest.raises(InvalidClass):
            combined_loss([(np.zeros(2), lsro_label(2), False)], cfg)
        with pytest.raises(InvalidClass):
            combined_loss([(np.zeros(2), ground_truth_label(1, 2), True)], cfg)


class TestLogSumExp:
    def test_matches_naive_at_moderate_scale(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.normal(0, 3, size=11)
            assert abs(log_sum_exp(x) - math.log(np.sum(np.exp(x)))) < 1e-12

    def test_stable_at_extremes(self):
        assert abs(log_sum_exp(np.array([1000.0, 1000.0])) - (1000.0 + LN2)) < 1e-12
