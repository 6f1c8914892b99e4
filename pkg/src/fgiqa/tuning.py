"""Camera-tuning harness: simulate fine-grained parameter sweeps and rank
the resulting configurations with pairwise model comparisons."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from .data import CameraParameters, DataError, ImageSample, PARAM_NAMES
from .params import ParameterRange, default_ranges, normalize_params
from .synthetic import SceneSpec, render_image
from .training import Checkpoint, crop_image


@dataclass(frozen=True)
class SweepSpec:
    """A scene plus the parameter grid to sweep over."""

    scene: SceneSpec
    steps: dict[str, list[float]]  # varied parameter name -> step values
    seed: int = 0

    def __post_init__(self) -> None:
        for name in self.steps:
            if name not in PARAM_NAMES:
                raise DataError(f"unknown camera parameter {name!r}")
            if not self.steps[name]:
                raise DataError(f"empty step list for {name!r}")
        if self.n_configurations < 2:
            raise DataError("a sweep needs at least 2 configurations")

    @property
    def n_configurations(self) -> int:
        n = 1
        for values in self.steps.values():
            n *= len(values)
        return n

    def configurations(self) -> list[CameraParameters]:
        """Cartesian product of step values; unswept parameters stay optimal."""
        names = sorted(self.steps)
        configs = []
        for combo in itertools.product(*(self.steps[n] for n in names)):
            values = dict(zip(names, combo))
            configs.append(
                CameraParameters.from_sequence(
                    values.get(name, getattr(self.scene.optimal_params, name))
                    for name in PARAM_NAMES
                )
            )
        return configs


@dataclass
class TuningResult:
    """Ranking of sweep configurations, best first."""

    ranking: list[int]  # configuration indices, winner first
    scores: dict[int, float] = field(default_factory=dict)  # Borda or raw score
    method: str = "pairwise"

    @property
    def winner(self) -> int:
        return self.ranking[0]

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "ranking": self.ranking,
            "scores": {str(k): v for k, v in self.scores.items()},
        }


def single_parameter_sweep(
    scene: SceneSpec,
    param_name: str,
    n_steps: int = 15,
    span: float = 0.35,
    ranges: dict[str, ParameterRange] | None = None,
    seed: int = 0,
) -> SweepSpec:
    """Evenly spaced small steps of one parameter around the scene optimum."""
    ranges = ranges if ranges is not None else default_ranges()
    center = ranges[param_name].normalize(getattr(scene.optimal_params, param_name))
    grid = np.clip(np.linspace(center - span, center + span, n_steps), 0.0, 1.0)
    values = [ranges[param_name].denormalize(float(t)) for t in grid]
    return SweepSpec(scene=scene, steps={param_name: values}, seed=seed)


def simulate_sweep(
    spec: SweepSpec,
    ranges: dict[str, ParameterRange] | None = None,
    image_size: int = 96,
) -> list[tuple[CameraParameters, ImageSample]]:
    """Render one image per configuration of the sweep grid."""
    ranges = ranges if ranges is not None else default_ranges()
    out = []
    for i, params in enumerate(spec.configurations()):
        sample = render_image(spec.scene, params, ranges, image_size=image_size)
        sample.image_id = f"{spec.scene.scene_id}_cfg{i:03d}"
        out.append((params, sample))
    return out


def _sweep_features(images: list[ImageSample], ckpt: Checkpoint):
    cfg = ckpt.config
    model = ckpt.build_model()
    tensors, boxes, p_norms = [], [], []
    ranges = default_ranges()
    top = left = (cfg.resize - cfg.crop) // 2
    for sample in images:
        px = torch.from_numpy(sample.pixels).float().permute(2, 0, 1).unsqueeze(0)
        px = F.interpolate(px, size=(cfg.resize, cfg.resize), mode="bilinear", align_corners=False)
        sx = cfg.resize / sample.width
        sy = cfg.resize / sample.height
        bx = [(x0 * sx, y0 * sy, x1 * sx, y1 * sy) for x0, y0, x1, y1 in sample.human_boxes]
        px, bx = crop_image(px.squeeze(0), bx, top, left, cfg.crop)
        tensors.append(px)
        boxes.append(bx)
        if cfg.use_gcpf and sample.params is not None:
            p_norms.append(normalize_params(sample.params, ranges))
    p_norm = (
        torch.tensor(np.array(p_norms), dtype=torch.float32)
        if cfg.use_gcpf and len(p_norms) == len(images)
        else None
    )
    with torch.no_grad():
        feats = model.features(torch.stack(tensors), boxes, p_norm)
        scores = model.regressor(feats, clamp=True)
    return model, feats, scores


def model_overall_scores(images: list[ImageSample], ckpt: Checkpoint) -> np.ndarray:
    """Clamped overall-score predictions for a list of images."""
    _, _, scores = _sweep_features(images, ckpt)
    return scores[:, 0].numpy().astype(np.float64)


def rank_candidates(images: list[ImageSample], ckpt: Checkpoint) -> TuningResult:
    """Round-robin pairwise tournament ranked by mean symmetrized preference.

    The Borda score of image i is the mean over opponents of the symmetrized
    probability that i beats them; ties break on the model's overall score
    head, then on index.
    """
    n = len(images)
    if n < 2:
        raise DataError("ranking needs at least 2 candidate images")
    model, feats, scores = _sweep_features(images, ckpt)
    prob = np.zeros((n, n))
    idx_a, idx_b = zip(*itertools.combinations(range(n), 2))
    with torch.no_grad():
        c = model.compare(feats[list(idx_a)], feats[list(idx_b)], symmetrized=True)
    overall = c[:, 0].numpy().astype(np.float64)
    for (i, j), p in zip(zip(idx_a, idx_b), overall):
        prob[i, j] = p
        prob[j, i] = 1.0 - p
    borda = {i: float(prob[i].sum() / (n - 1)) for i in range(n)}
    overall_scores = scores[:, 0].numpy().astype(np.float64)
    ranking = sorted(range(n), key=lambda i: (-borda[i], -overall_scores[i], i))
    return TuningResult(ranking=ranking, scores=borda, method="pairwise")


def score_rank_candidates(images: list[ImageSample], scorer) -> TuningResult:
    """Rank by a plain per-image scalar scorer (descending, index tie-break)."""
    if len(images) < 2:
        raise DataError("ranking needs at least 2 candidate images")
    scores = {i: float(scorer(sample)) for i, sample in enumerate(images)}
    ranking = sorted(range(len(images)), key=lambda i: (-scores[i], i))
    return TuningResult(ranking=ranking, scores=scores, method="score")


def win_rate(
    winners_a: list[float], winners_b: list[float]
) -> float:
    """Fraction of sweeps where method A's winner judges strictly better than
    method B's; equal judgments count half."""
    if len(winners_a) != len(winners_b) or not winners_a:
        raise DataError("win_rate needs two aligned non-empty judgment lists")
    total = 0.0
    for qa, qb in zip(winners_a, winners_b):
        total += 1.0 if qa > qb else (0.0 if qa < qb else 0.5)
    return total / len(winners_a)


def save_tuning_results(results: list[tuple[str, TuningResult]], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for scene_id, result in results:
            rec = {"scene_id": scene_id, **result.to_json()}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def contact_sheet(
    images: list[ImageSample], ranking: list[int], path: str | Path, thumb: int = 96
) -> None:
    """Write a single row of ranked thumbnails, best first."""
    from PIL import Image

    sheets = []
    for idx in ranking:
        arr = np.clip(images[idx].pixels * 255.0 + 0.5, 0, 255).astype(np.uint8)
        sheets.append(Image.fromarray(arr).resize((thumb, thumb)))
    sheet = Image.new("RGB", (thumb * len(sheets), thumb))
    for i, im in enumerate(sheets):
        sheet.paste(im, (i * thumb, 0))
    sheet.save(Path(path), format="PNG")
