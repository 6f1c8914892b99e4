"""The full quality model: extraction, optional parameter fusion, heads."""

from __future__ import annotations

import torch
from torch import nn

from .gcpf import ParameterGraphFusion
from .heads import AttributeRegressor, PairwiseComparator
from .hfe import BackboneConfig, HumanAwareExtractor


class QualityModel(nn.Module):
    """Predicts five attribute scores per image and preference probabilities
    per image pair; camera parameters are fused in when the graph module is
    enabled and parameters are supplied."""

    def __init__(
        self,
        backbone: BackboneConfig | None = None,
        use_gcpf: bool = False,
        node_dim: int = 128,
    ):
        super().__init__()
        backbone = backbone if backbone is not None else BackboneConfig()
        self.backbone_cfg = backbone
        self.use_gcpf = use_gcpf
        self.extractor = HumanAwareExtractor(backbone)
        self.gcpf = (
            ParameterGraphFusion(backbone.channels, node_dim=node_dim) if use_gcpf else None
        )
        self.regressor = AttributeRegressor(backbone.channels)
        self.comparator = PairwiseComparator(backbone.channels)

    def features(
        self,
        images: torch.Tensor,
        boxes: list[list],
        p_norm: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Fused feature per image: visual-only, or parameter-aware when the
        graph module is active and normalized parameters are given."""
        f_q = self.extractor(images, boxes)
        if self.gcpf is not None and p_norm is not None:
            return self.gcpf(f_q, p_norm)
        return f_q

    def predict_scores(
        self,
        images: torch.Tensor,
        boxes: list[list],
        p_norm: torch.Tensor | None = None,
        clamp: bool = True,
    ) -> torch.Tensor:
        return self.regressor(self.features(images, boxes, p_norm), clamp=clamp)

    def compare(
        self, f_a: torch.Tensor, f_b: torch.Tensor, symmetrized: bool = True
    ) -> torch.Tensor:
        return self.comparator(f_a, f_b, symmetrized=symmetrized)
