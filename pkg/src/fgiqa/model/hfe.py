"""Human-aware feature extraction: backbone, ROI fusion of human boxes,
nine-partition residual transforms and cross-attention fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torchvision.ops import roi_align


@dataclass(frozen=True)
class BackboneConfig:
    channels: int = 64
    depth: int = 4  # pyramid levels; cell size (stride) is 2**(depth+1) pixels
    weights_path: str | None = None

    def __post_init__(self) -> None:
        if self.channels % 2 != 0 or self.channels < 8:
            raise ValueError("backbone channels must be even and >= 8")
        if self.depth < 1:
            raise ValueError("backbone depth must be >= 1")

    @property
    def stride(self) -> int:
        return 2 ** (self.depth + 1)


@dataclass
class FeatureMap:
    """Channels-first spatial feature grid plus its input-pixel stride."""

    grid: torch.Tensor  # (C, H', W')
    stride: int


def _gaussian_kernel1d(sigma: float) -> torch.Tensor:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = torch.arange(-radius, radius + 1, dtype=torch.float32)
    k = torch.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur(plane: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Separable Gaussian blur of a (B, 1, H, W) plane with reflect padding."""
    r = (kernel.numel() - 1) // 2
    k = kernel.to(plane.dtype)
    plane = nn.functional.pad(plane, (r, r, 0, 0), mode="reflect")
    plane = nn.functional.conv2d(plane, k.view(1, 1, 1, -1))
    plane = nn.functional.pad(plane, (0, 0, r, r), mode="reflect")
    return nn.functional.conv2d(plane, k.view(1, 1, -1, 1))


class SmallBackbone(nn.Module):
    """Distortion-statistics backbone: fixed multi-scale filters, learned mixing.

    A fixed band-pass pyramid summarizes each ``stride``-sized cell with
    statistics that carry the low-level quality cues (band energies for blur
    and noise, local mean/contrast and clipping fractions for exposure,
    chroma statistics for color shifts). Only the pointwise mixing network on
    top of those statistics is learned, so the backbone trains reliably from
    a few hundred images. An adapter implementing the same
    (B,3,H,W) -> (B,C,H',W') contract can be swapped in for pretrained
    external backbones.
    """

    # Typical per-statistic location/spread, used as fixed input scaling so
    # the learned layers see O(1) activations (same role as the usual
    # channel mean/std constants for pretrained backbones).
    _BAND_LOG_SHIFT = -13.0
    _BAND_LOG_SCALE = 3.0
    _BAND_ABS_GAIN = 25.0

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        sigmas = [0.7 * 2.0 ** k for k in range(cfg.depth)]
        for i, s in enumerate(sigmas):
            self.register_buffer(f"kernel_{i}", _gaussian_kernel1d(s), persistent=False)
        self.n_stats = 2 * cfg.depth + 8
        self.mix = nn.Sequential(
            nn.Conv2d(self.n_stats, cfg.channels, kernel_size=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(cfg.channels, cfg.channels, kernel_size=1),
        )
        if cfg.weights_path is not None:
            state = torch.load(cfg.weights_path, map_location="cpu", weights_only=True)
            self.load_state_dict(state)

    @property
    def stride(self) -> int:
        return self.cfg.stride

    def _kernels(self) -> list[torch.Tensor]:
        return [getattr(self, f"kernel_{i}") for i in range(self.cfg.depth)]

    def _pool(self, plane: torch.Tensor) -> torch.Tensor:
        return nn.functional.avg_pool2d(
            plane, kernel_size=self.stride, stride=self.stride, ceil_mode=True,
            count_include_pad=False,
        )

    def _log_energy(self, plane: torch.Tensor) -> torch.Tensor:
        pooled = self._pool(plane.square())
        return (torch.log(pooled + 1e-8) - self._BAND_LOG_SHIFT) / self._BAND_LOG_SCALE

    def statistics(self, images: torch.Tensor) -> torch.Tensor:
        """Fixed per-cell statistic planes, (B, n_stats, H', W')."""
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (B,3,H,W) images, got {tuple(images.shape)}")
        h, w = images.shape[-2:]
        if -(-h // self.stride) < 3 or -(-w // self.stride) < 3:
            raise ValueError(
                f"input {h}x{w} too small for stride {self.stride}: need >= 3x3 cells"
            )
        gray = images.mean(dim=1, keepdim=True)
        kernels = self._kernels()
        levels = [gray] + [_blur(gray, k) for k in kernels]
        stats = []
        for fine, coarse in zip(levels[:-1], levels[1:]):
            band = fine - coarse
            stats.append(self._log_energy(band))
            stats.append(self._pool(band.abs()) * self._BAND_ABS_GAIN)
        base = levels[-1]
        stats.append(self._pool(base))
        stats.append(self._log_energy(gray - base))
        stats.append(self._pool(torch.sigmoid((gray - 0.95) * 30.0)))
        stats.append(self._pool(torch.sigmoid((0.05 - gray) * 30.0)))
        for diff in (images[:, :1] - images[:, 1:2], images[:, 1:2] - images[:, 2:3]):
            stats.append(self._log_energy(diff - _blur(diff, kernels[0])))
        stats.append(self._pool(images[:, :1] - images[:, 2:3]))
        chroma = (images - gray).square().mean(dim=1, keepdim=True).sqrt()
        stats.append(self._log_energy(chroma))
        return torch.cat(stats, dim=1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.mix(self.statistics(images))


class RoiFusion(nn.Module):
    """ROI-align human boxes, pool to a region vector, reduce to C/2 and
    broadcast-concatenate to every spatial cell, projecting back to C."""

    ROI_SIZE = 3

    def __init__(self, channels: int):
        super().__init__()
        if channels % 2 != 0:
            raise ValueError("channels must be even")
        self.channels = channels
        self.reduce = nn.Linear(channels, channels // 2)
        self.project = nn.Conv2d(channels + channels // 2, channels, kernel_size=1)

    def region_vector(
        self, feature: torch.Tensor, boxes: list[list[tuple[float, float, float, float]]],
        stride: int,
    ) -> torch.Tensor:
        """Per-image C/2 human-region descriptor (mean over boxes and cells)."""
        b, c, h, w = feature.shape
        box_tensors = []
        for i, image_boxes in enumerate(boxes):
            kept = [
                bx for bx in image_boxes
                if (bx[2] - bx[0]) / stride > 0 and (bx[3] - bx[1]) / stride > 0
            ]
            if not kept:
                kept = [(0.0, 0.0, float(w * stride), float(h * stride))]
            box_tensors.append(
                torch.tensor(kept, dtype=feature.dtype, device=feature.device)
            )
        pooled = roi_align(
            feature,
            box_tensors,
            output_size=self.ROI_SIZE,
            spatial_scale=1.0 / stride,
            aligned=True,
        )  # (total_boxes, C, 3, 3)
        per_box = pooled.mean(dim=(2, 3))
        counts = [t.shape[0] for t in box_tensors]
        chunks = per_box.split(counts, dim=0)
        region = torch.stack([ch.mean(dim=0) for ch in chunks], dim=0)  # (B, C)
        return self.reduce(region)

    def forward(self, feature, boxes, stride):
        r_h = self.region_vector(feature, boxes, stride)  # (B, C/2)
        b, c, h, w = feature.shape
        tiled = r_h[:, :, None, None].expand(b, c // 2, h, w)
        enhanced = self.project(torch.cat([feature, tiled], dim=1))
        return enhanced, r_h


def union_box(boxes: list[tuple[float, float, float, float]]):
    xs0, ys0, xs1, ys1 = zip(*boxes)
    return (min(xs0), min(ys0), max(xs1), max(ys1))


def partition_bands(
    height: int, width: int, box: tuple[float, float, float, float], stride: int
) -> tuple[tuple[int, int], tuple[int, int]]:
    """Central-tile boundaries of the 3x3 partition, in feature-grid indices.

    The central tile covers the box; boundaries are clamped so all nine
    tiles keep at least one row and one column.
    """
    if height < 3 or width < 3:
        raise ValueError("feature grid must be at least 3x3 to partition")
    x0, y0, x1, y1 = box
    r0 = min(max(math.floor(y0 / stride), 1), height - 2)
    r1 = min(max(math.ceil(y1 / stride), r0 + 1), height - 1)
    c0 = min(max(math.floor(x0 / stride), 1), width - 2)
    c1 = min(max(math.ceil(x1 / stride), c0 + 1), width - 1)
    return (r0, r1), (c0, c1)


def partition_nine(
    grid: torch.Tensor, bands: tuple[tuple[int, int], tuple[int, int]]
) -> list[torch.Tensor]:
    """Split a (C, H, W) grid into nine disjoint, exhaustive tiles (row-major)."""
    (r0, r1), (c0, c1) = bands
    h, w = grid.shape[-2:]
    rows = [(0, r0), (r0, r1), (r1, h)]
    cols = [(0, c0), (c0, c1), (c1, w)]
    return [grid[..., ra:rb, ca:cb] for ra, rb in rows for ca, cb in cols]


class PartitionTransform(nn.Module):
    """Nine partition-specific 3x3 convolutions with residual learning."""

    def __init__(self, channels: int):
        super().__init__()
        self.transforms = nn.ModuleList(
            nn.Conv2d(channels, channels, kernel_size=3, padding=1) for _ in range(9)
        )

    def forward(self, grid: torch.Tensor, bands) -> torch.Tensor:
        """Transform tiles of a single (C, H, W) grid and reassemble in place."""
        tiles = partition_nine(grid, bands)
        out_tiles = [
            conv(tile.unsqueeze(0)).squeeze(0) + tile
            for conv, tile in zip(self.transforms, tiles)
        ]
        (r0, r1), (c0, c1) = bands
        h, w = grid.shape[-2:]
        rows = [(0, r0), (r0, r1), (r1, h)]
        cols = [(0, c0), (c0, c1), (c1, w)]
        out = grid.new_empty(grid.shape)
        for k, ((ra, rb), (ca, cb)) in enumerate((r, c) for r in rows for c in cols):
            out[..., ra:rb, ca:cb] = out_tiles[k]
        return out


class CrossAttentionFusion(nn.Module):
    """Single-query cross-attention from the pooled human-aware feature onto
    the spatial tokens of the backbone map."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.w_q = nn.Linear(channels, channels, bias=False)
        self.w_k = nn.Linear(channels, channels, bias=False)
        self.w_v = nn.Linear(channels, channels, bias=False)
        self.out = nn.Linear(channels, channels)

    def attention_weights(self, f_h: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        q = self.w_q(f_h).unsqueeze(1)  # (B, 1, C)
        k = self.w_k(tokens)  # (B, N, C)
        logits = torch.matmul(q, k.transpose(1, 2)) / math.sqrt(self.channels)
        return torch.softmax(logits, dim=-1)  # (B, 1, N)

    def forward(self, f_h: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        attn = self.attention_weights(f_h, tokens)
        fused = torch.matmul(attn, self.w_v(tokens)).squeeze(1)  # (B, C)
        return self.out(fused)


class HumanAwareExtractor(nn.Module):
    """Full extraction stack producing one quality-aware C-vector per image."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = SmallBackbone(cfg)
        self.roi = RoiFusion(cfg.channels)
        self.partitions = PartitionTransform(cfg.channels)
        self.attention = CrossAttentionFusion(cfg.channels)

    @property
    def stride(self) -> int:
        return self.backbone.stride

    def resolve_boxes(
        self, boxes: list[tuple[float, float, float, float]], width: int, height: int
    ) -> list[tuple[float, float, float, float]]:
        """Manifest boxes when present, else one full-image box."""
        if boxes:
            return list(boxes)
        return [(0.0, 0.0, float(width), float(height))]

    def forward(self, images: torch.Tensor, boxes: list[list]) -> torch.Tensor:
        b, _, height, width = images.shape
        boxes = [self.resolve_boxes(bx, width, height) for bx in boxes]
        base = self.backbone(images)  # (B, C, H', W')
        enhanced, _ = self.roi(base, boxes, self.stride)
        h, w = base.shape[-2:]
        transformed = []
        for i in range(b):
            bands = partition_bands(h, w, union_box(boxes[i]), self.stride)
            transformed.append(self.partitions(enhanced[i], bands))
        combined = torch.stack(transformed, dim=0)
        f_h = combined.mean(dim=(2, 3))  # global average pool, (B, C)
        tokens = base.flatten(2).transpose(1, 2)  # (B, N, C)
        return self.attention(f_h, tokens)
