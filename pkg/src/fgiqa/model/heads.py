"""Attribute regression heads, pairwise preference classifier and losses."""

from __future__ import annotations

import torch
from torch import nn

from ..data import ATTRIBUTES

BCE_EPS = 1e-7
SCORE_MIN, SCORE_MAX = 1.0, 5.0


def _mlp(in_dim: int, hidden: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, 1))


class AttributeRegressor(nn.Module):
    """Five independent two-layer heads, one score per attribute."""

    def __init__(self, feature_dim: int):
        super().__init__()
        self.heads = nn.ModuleDict(
            {attr: _mlp(feature_dim, feature_dim // 2) for attr in ATTRIBUTES}
        )
        # Start every head at the middle of the score range so only the
        # deviation from a neutral score has to be learned.
        for head in self.heads.values():
            nn.init.constant_(head[-1].bias, (SCORE_MIN + SCORE_MAX) / 2.0)

    def forward(self, features: torch.Tensor, clamp: bool = False) -> torch.Tensor:
        """(B, 5) scores in attribute order; clamp to [1, 5] at inference."""
        scores = torch.cat([self.heads[a](features) for a in ATTRIBUTES], dim=-1)
        if clamp:
            scores = scores.clamp(SCORE_MIN, SCORE_MAX)
        return scores


class PairwiseComparator(nn.Module):
    """Per-attribute preference probability for an ordered feature pair."""

    def __init__(self, feature_dim: int):
        super().__init__()
        self.heads = nn.ModuleDict(
            {attr: _mlp(3 * feature_dim, feature_dim // 2) for attr in ATTRIBUTES}
        )

    def raw(self, f_a: torch.Tensor, f_b: torch.Tensor) -> torch.Tensor:
        """Training-time probabilities sigmoid(head([a, b, a-b])), (B, 5)."""
        joint = torch.cat([f_a, f_b, f_a - f_b], dim=-1)
        logits = torch.cat([self.heads[a](joint) for a in ATTRIBUTES], dim=-1)
        return torch.sigmoid(logits)

    def forward(self, f_a: torch.Tensor, f_b: torch.Tensor, symmetrized: bool = True):
        """Inference comparison; symmetrization enforces c(a,b) + c(b,a) = 1."""
        c_ab = self.raw(f_a, f_b)
        if not symmetrized:
            return c_ab
        c_ba = self.raw(f_b, f_a)
        return (c_ab + 1.0 - c_ba) / 2.0


def regression_loss(
    predictions: torch.Tensor, targets: torch.Tensor, variances: torch.Tensor
) -> torch.Tensor:
    """Variance-weighted L1: mean over items of sum_attr exp(-v) * |err|."""
    if predictions.numel() == 0:
        raise ValueError("regression_loss on an empty batch")
    per_term = torch.exp(-variances) * (predictions - targets).abs()
    return per_term.sum(dim=-1).mean()


def ranking_loss(probabilities: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Soft-label binary cross-entropy summed over attributes, mean over pairs."""
    if probabilities.numel() == 0:
        raise ValueError("ranking_loss on an empty batch")
    p = probabilities.clamp(BCE_EPS, 1.0 - BCE_EPS)
    bce = -(labels * torch.log(p) + (1.0 - labels) * torch.log(1.0 - p))
    return bce.sum(dim=-1).mean()


def total_loss(
    reg: torch.Tensor, rank: torch.Tensor, lambda_reg: float = 1.0, lambda_rank: float = 2.0
) -> torch.Tensor:
    return lambda_reg * reg + lambda_rank * rank
