import math

import pytest
import torch

from fgiqa.data import ATTRIBUTES
from fgiqa.model.heads import (
    AttributeRegressor,
    PairwiseComparator,
    ranking_loss,
    regression_loss,
    total_loss,
)


class TestAttributeRegressor:
    def test_output_shape_and_order(self):
        reg = AttributeRegressor(16)
        out = reg(torch.randn(4, 16))
        assert out.shape == (4, len(ATTRIBUTES))

    def test_clamped_inference_range(self):
        reg = AttributeRegressor(16)
        out = reg(100.0 * torch.randn(64, 16), clamp=True)
        assert out.min() >= 1.0 and out.max() <= 5.0

    def test_training_output_unclamped(self):
        reg = AttributeRegressor(8)
        with torch.no_grad():
            for head in reg.heads.values():
                head[-1].bias.fill_(7.0)
                head[-1].weight.zero_()
        assert torch.allclose(reg(torch.randn(2, 8)), torch.full((2, 5), 7.0))

    def test_heads_are_independent(self):
        reg = AttributeRegressor(16)
        x = torch.randn(3, 16)
        before = reg(x)
        with torch.no_grad():
            reg.heads["noise"][-1].bias.add_(1.0)
        after = reg(x)
        assert torch.allclose(after[:, :4], before[:, :4])
        assert torch.allclose(after[:, 4], before[:, 4] + 1.0)


class TestPairwiseComparator:
    def test_probability_range(self):
        cmp = PairwiseComparator(16)
        p = cmp.raw(torch.randn(8, 16), torch.randn(8, 16))
        assert p.shape == (8, 5)
        assert (p > 0).all() and (p < 1).all()

    def test_symmetrized_antisymmetry(self):
        torch.manual_seed(0)
        cmp = PairwiseComparator(16)
        a, b = torch.randn(32, 16), torch.randn(32, 16)
        c_ab = cmp(a, b, symmetrized=True)
        c_ba = cmp(b, a, symmetrized=True)
        assert torch.allclose(c_ab + c_ba, torch.ones_like(c_ab), atol=1e-6)

    def test_self_comparison_is_half(self):
        cmp = PairwiseComparator(16)
        a = torch.randn(16, 16)
        c_aa = cmp(a, a, symmetrized=True)
        assert torch.allclose(c_aa, torch.full_like(c_aa, 0.5), atol=1e-6)

    def test_raw_is_order_sensitive(self):
        torch.manual_seed(1)
        cmp = PairwiseComparator(16)
        a, b = torch.randn(4, 16), torch.randn(4, 16)
        assert not torch.allclose(cmp.raw(a, b), cmp.raw(b, a))


class TestRegressionLoss:
    def test_hand_computed_value(self):
        preds = torch.tensor([[3.0, 2.0]])
        targets = torch.tensor([[1.0, 2.5]])
        variances = torch.tensor([[0.0, math.log(2.0)]])
        # exp(0)*2 + exp(-log 2)*0.5 = 2.25
        assert regression_loss(preds, targets, variances).item() == pytest.approx(2.25)

    def test_high_variance_downweights(self):
        preds = torch.tensor([[3.0]])
        targets = torch.tensor([[1.0]])
        lo = regression_loss(preds, targets, torch.tensor([[0.0]]))
        hi = regression_loss(preds, targets, torch.tensor([[4.0]]))
        assert hi < lo

    def test_mean_over_items(self):
        preds = torch.tensor([[1.0], [3.0]])
        targets = torch.zeros(2, 1)
        v = torch.zeros(2, 1)
        assert regression_loss(preds, targets, v).item() == pytest.approx(2.0)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            regression_loss(torch.empty(0, 5), torch.empty(0, 5), torch.empty(0, 5))


class TestRankingLoss:
    def test_hand_computed_value(self):
        p = torch.tensor([[0.8, 0.4]])
        y = torch.tensor([[1.0, 0.0]])
        expected = -math.log(0.8) - math.log(0.6)
        assert ranking_loss(p, y).item() == pytest.approx(expected, rel=1e-6)

    def test_soft_label_at_half(self):
        p = torch.tensor([[0.5]])
        y = torch.tensor([[0.5]])
        assert ranking_loss(p, y).item() == pytest.approx(math.log(2.0), rel=1e-6)

    def test_extreme_probabilities_stay_finite(self):
        p = torch.tensor([[1.0, 0.0]])
        y = torch.tensor([[0.0, 1.0]])
        assert torch.isfinite(ranking_loss(p, y))

    def test_minimized_when_matching_labels(self):
        y = torch.tensor([[0.7]])
        at_label = ranking_loss(torch.tensor([[0.7]]), y)
        away = ranking_loss(torch.tensor([[0.3]]), y)
        assert at_label < away

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            ranking_loss(torch.empty(0, 5), torch.empty(0, 5))


class TestTotalLoss:
    def test_default_one_to_two_weighting(self):
        reg = torch.tensor(3.0)
        rank = torch.tensor(5.0)
        assert total_loss(reg, rank).item() == pytest.approx(13.0)

    def test_custom_weights(self):
        assert total_loss(torch.tensor(1.0), torch.tensor(1.0), 0.5, 4.0).item() == 4.5
