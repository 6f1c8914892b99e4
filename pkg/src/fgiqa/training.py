"""End-to-end multi-task training: variance-weighted regression on both
members of every pair plus preference rank learning, with cosine-annealed
AdamW and flip-only augmentation."""

from __future__ import annotations

import dataclasses
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from .annotation import annotation_pipeline
from .data import (
    ATTRIBUTES,
    Box,
    DataError,
    DatasetManifest,
    MOSRecord,
    PairPreference,
    load_image,
)
from .metrics import MetricError, MetricReport, fg_acc, plcc, srcc
from .model.heads import ranking_loss, regression_loss, total_loss
from .model.hfe import BackboneConfig
from .model.network import QualityModel
from .params import default_ranges, normalize_params

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """Training failed numerically (divergence, non-finite loss)."""


@dataclass(frozen=True)
class TrainConfig:
    # The desk-scale backbone trains from scratch, which needs a much larger
    # maximum learning rate than fine-tuning a pretrained one would.
    learning_rate_max: float = 2e-3
    schedule: str = "cosine"
    batch_size: int = 64
    epochs: int = 5
    resize: int = 256
    crop: int = 224
    lambda_reg: float = 1.0
    lambda_rank: float = 2.0
    seed: int = 0
    use_gcpf: bool = False
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    node_dim: int = 128
    weight_decay: float = 0.01
    cosine_floor: float = 0.01  # fraction of the maximum learning rate
    val_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.crop > self.resize:
            raise ValueError("crop must not exceed resize")
        if min(self.crop, self.resize, self.batch_size, self.epochs) <= 0:
            raise ValueError("sizes must be positive")
        if self.schedule != "cosine":
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("backbone"), dict):
            d["backbone"] = BackboneConfig(**d["backbone"])
        return cls(**d)


def cosine_lr(step: int, total_steps: int, max_lr: float, floor_fraction: float) -> float:
    """Cosine annealing from max_lr at step 0 down to the floor at the last step."""
    floor = floor_fraction * max_lr
    if total_steps <= 1:
        return max_lr
    progress = step / (total_steps - 1)
    return floor + (max_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


def flip_image(
    pixels: torch.Tensor, boxes: list[Box], flip_h: bool, flip_v: bool
) -> tuple[torch.Tensor, list[Box]]:
    """Horizontal/vertical flip of a (3, H, W) tensor with consistent boxes."""
    h, w = pixels.shape[-2:]
    out = pixels
    new_boxes = list(boxes)
    if flip_h:
        out = torch.flip(out, dims=[-1])
        new_boxes = [(w - x1, y0, w - x0, y1) for x0, y0, x1, y1 in new_boxes]
    if flip_v:
        out = torch.flip(out, dims=[-2])
        new_boxes = [(x0, h - y1, x1, h - y0) for x0, y0, x1, y1 in new_boxes]
    return out, new_boxes


def crop_image(
    pixels: torch.Tensor, boxes: list[Box], top: int, left: int, size: int
) -> tuple[torch.Tensor, list[Box]]:
    """Crop a (3, H, W) tensor; boxes are shifted, clipped, degenerates dropped."""
    out = pixels[..., top : top + size, left : left + size]
    kept = []
    for x0, y0, x1, y1 in boxes:
        nx0, ny0 = max(x0 - left, 0.0), max(y0 - top, 0.0)
        nx1, ny1 = min(x1 - left, float(size)), min(y1 - top, float(size))
        if nx0 < nx1 and ny0 < ny1:
            kept.append((nx0, ny0, nx1, ny1))
    return out, kept


def make_batches(n_items: int, batch_size: int, rng: random.Random) -> list[list[int]]:
    """Deterministic shuffled partition into batches of at most batch_size."""
    order = list(range(n_items))
    rng.shuffle(order)
    return [order[i : i + batch_size] for i in range(0, n_items, batch_size)]


@dataclass
class _Item:
    """One preprocessed image held in memory at the resize resolution."""

    image_id: str
    scene_id: str
    pixels: torch.Tensor  # (3, resize, resize), float32
    boxes: list[Box]
    p_norm: np.ndarray | None
    mos: np.ndarray
    variance: np.ndarray


def _preprocess_items(
    manifest: DatasetManifest,
    root: Path,
    mos_by_id: dict[str, MOSRecord],
    image_ids: set[str],
    resize: int,
) -> dict[str, _Item]:
    ranges = default_ranges()
    by_id = manifest.samples_by_id()
    items: dict[str, _Item] = {}
    for image_id in sorted(image_ids):
        record = by_id[image_id]
        sample = load_image(record, root)
        px = torch.from_numpy(sample.pixels).float().permute(2, 0, 1).unsqueeze(0)
        px = F.interpolate(px, size=(resize, resize), mode="bilinear", align_corners=False)
        sx, sy = resize / sample.width, resize / sample.height
        boxes = [(x0 * sx, y0 * sy, x1 * sx, y1 * sy) for x0, y0, x1, y1 in record.human_boxes]
        mos_rec = mos_by_id[image_id]
        items[image_id] = _Item(
            image_id=image_id,
            scene_id=record.scene_id,
            pixels=px.squeeze(0),
            boxes=boxes,
            p_norm=normalize_params(record.params, ranges) if record.params else None,
            mos=np.array([mos_rec.mos[a] for a in ATTRIBUTES]),
            variance=np.array([mos_rec.variance[a] for a in ATTRIBUTES]),
        )
    return items


def _restrict_manifest(manifest: DatasetManifest, scene_ids: set[str]) -> DatasetManifest:
    samples = [s for s in manifest.samples if s.scene_id in scene_ids]
    ids = {s.image_id for s in samples}
    annotations = [a for a in manifest.annotations if a.image_id in ids]
    return DatasetManifest(samples=samples, annotations=annotations)


def _pair_batch(
    items: dict[str, _Item],
    pairs: list[PairPreference],
    cfg: TrainConfig,
    rng: random.Random | None,
):
    """Tensors for one pair batch; both members share crop and flip draws.

    Returns (images, boxes, p_norm, mos, variance, labels) with the first
    len(pairs) rows holding the p-side images and the rest the q-side.
    """
    max_off = cfg.resize - cfg.crop
    draws = []
    for _ in pairs:
        if rng is not None:
            draws.append(
                (
                    rng.randint(0, max_off),
                    rng.randint(0, max_off),
                    rng.random() < 0.5,
                    rng.random() < 0.5,
                )
            )
        else:
            draws.append((max_off // 2, max_off // 2, False, False))

    images, boxes, p_norms = [], [], []
    for side in (0, 1):
        for pair, (top, left, fh, fv) in zip(pairs, draws):
            item = items[pair.image_p if side == 0 else pair.image_q]
            px, bx = crop_image(item.pixels, item.boxes, top, left, cfg.crop)
            px, bx = flip_image(px, bx, fh, fv)
            images.append(px)
            boxes.append(bx)
            if cfg.use_gcpf:
                if item.p_norm is None:
                    raise DataError(
                        f"{item.image_id}: parameter fusion enabled but the "
                        "sample carries no camera parameters"
                    )
                p_norms.append(item.p_norm)

    ordered = [items[p.image_p] for p in pairs] + [items[p.image_q] for p in pairs]
    return (
        torch.stack(images),
        boxes,
        torch.tensor(np.array(p_norms), dtype=torch.float32) if p_norms else None,
        torch.tensor(np.array([it.mos for it in ordered]), dtype=torch.float32),
        torch.tensor(np.array([it.variance for it in ordered]), dtype=torch.float32),
        torch.tensor(
            np.array([[p.labels[a] for a in ATTRIBUTES] for p in pairs]),
            dtype=torch.float32,
        ),
    )


def _image_features(
    model: QualityModel,
    items: dict[str, _Item],
    image_ids: list[str],
    cfg: TrainConfig,
    batch_size: int = 16,
) -> tuple[dict[str, torch.Tensor], dict[str, np.ndarray]]:
    """Center-crop features and clamped scores for a list of images."""
    feats: dict[str, torch.Tensor] = {}
    scores: dict[str, np.ndarray] = {}
    top = left = (cfg.resize - cfg.crop) // 2
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for start in range(0, len(image_ids), batch_size):
            chunk = image_ids[start : start + batch_size]
            images, boxes, p_norms = [], [], []
            for iid in chunk:
                item = items[iid]
                px, bx = crop_image(item.pixels, item.boxes, top, left, cfg.crop)
                images.append(px)
                boxes.append(bx)
                if cfg.use_gcpf and item.p_norm is not None:
                    p_norms.append(item.p_norm)
            p_norm = (
                torch.tensor(np.array(p_norms), dtype=torch.float32)
                if cfg.use_gcpf and len(p_norms) == len(chunk)
                else None
            )
            f = model.features(torch.stack(images), boxes, p_norm)
            s = model.regressor(f, clamp=True)
            for i, iid in enumerate(chunk):
                feats[iid] = f[i]
                scores[iid] = s[i].numpy().astype(np.float64)
    if was_training:
        model.train()
    return feats, scores


def _pairwise_probs(
    model: QualityModel,
    feats: dict[str, torch.Tensor],
    pairs: list[PairPreference],
    batch_size: int = 64,
) -> np.ndarray:
    """Symmetrized preference probabilities for a pair list, (n_pairs, 5)."""
    out = []
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            f_a = torch.stack([feats[p.image_p] for p in chunk])
            f_b = torch.stack([feats[p.image_q] for p in chunk])
            out.append(model.compare(f_a, f_b, symmetrized=True).numpy())
    return np.concatenate(out, axis=0).astype(np.float64)


@dataclass
class Checkpoint:
    """Versioned container for weights, config and the training history."""

    config: TrainConfig
    model_state: dict
    history: list[dict]
    version: int = CHECKPOINT_VERSION

    def build_model(self) -> QualityModel:
        model = QualityModel(
            self.config.backbone,
            use_gcpf=self.config.use_gcpf,
            node_dim=self.config.node_dim,
        )
        model.load_state_dict(self.model_state)
        model.eval()
        return model


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    torch.save(
        {
            "format_version": ckpt.version,
            "config": ckpt.config.to_dict(),
            "model_state": ckpt.model_state,
            "history": ckpt.history,
        },
        Path(path),
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint file not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version!r}")
    return Checkpoint(
        config=TrainConfig.from_dict(payload["config"]),
        model_state=payload["model_state"],
        history=payload["history"],
        version=version,
    )


def train(manifest: DatasetManifest, cfg: TrainConfig, root: str | Path) -> Checkpoint:
    """Train on the manifest's train split and return the final checkpoint."""
    root = Path(root)
    train_scenes = sorted(s for s, sub in manifest.split.items() if sub == "train")
    test_scenes = {s for s, sub in manifest.split.items() if sub == "test"}
    if not train_scenes:
        raise DataError("manifest has no train split")

    split_rng = random.Random(cfg.seed)
    shuffled = train_scenes[:]
    split_rng.shuffle(shuffled)
    n_val = max(1, round(len(shuffled) * cfg.val_fraction)) if len(shuffled) > 2 else 0
    val_scenes = set(shuffled[:n_val])
    fit_scenes = set(shuffled[n_val:])

    annotated = annotation_pipeline(_restrict_manifest(manifest, fit_scenes | val_scenes))
    mos_by_id = {m.image_id: m for m in annotated.mos_records}
    for pair in annotated.pairs:
        if pair.scene_id in test_scenes:
            raise DataError(f"scene leakage: test scene {pair.scene_id!r} in training pairs")
    fit_pairs = [p for p in annotated.pairs if p.scene_id in fit_scenes]
    val_pairs = [p for p in annotated.pairs if p.scene_id in val_scenes]
    if not fit_pairs:
        raise DataError("no training pairs after the validation hold-out")

    used_ids = {p.image_p for p in annotated.pairs} | {p.image_q for p in annotated.pairs}
    items = _preprocess_items(manifest, root, mos_by_id, used_ids, cfg.resize)

    torch.manual_seed(cfg.seed)
    model = QualityModel(cfg.backbone, use_gcpf=cfg.use_gcpf, node_dim=cfg.node_dim)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.learning_rate_max, weight_decay=cfg.weight_decay
    )
    n_batches = math.ceil(len(fit_pairs) / cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    aug_rng = random.Random(cfg.seed + 1)
    batch_rng = random.Random(cfg.seed + 2)

    history: list[dict] = []
    step = 0
    model.train()
    for epoch in range(cfg.epochs):
        epoch_losses: list[tuple[float, float, float]] = []
        for batch_idx in make_batches(len(fit_pairs), cfg.batch_size, batch_rng):
            batch_pairs = [fit_pairs[i] for i in batch_idx]
            lr = cosine_lr(step, total_steps, cfg.learning_rate_max, cfg.cosine_floor)
            for group in optimizer.param_groups:
                group["lr"] = lr
            images, boxes, p_norm, mos_t, var_t, labels = _pair_batch(
                items, batch_pairs, cfg, aug_rng
            )
            feats = model.features(images, boxes, p_norm)
            n = len(batch_pairs)
            reg = regression_loss(model.regressor(feats, clamp=False), mos_t, var_t)
            rank = ranking_loss(model.comparator.raw(feats[:n], feats[n:]), labels)
            loss = total_loss(reg, rank, cfg.lambda_reg, cfg.lambda_rank)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at step {step}: reg={reg.item()} rank={rank.item()}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append((loss.item(), reg.item(), rank.item()))
            step += 1

        entry = {
            "epoch": float(epoch + 1),
            "train_loss": float(np.mean([l[0] for l in epoch_losses])),
            "train_reg": float(np.mean([l[1] for l in epoch_losses])),
            "train_rank": float(np.mean([l[2] for l in epoch_losses])),
        }
        if val_pairs:
            entry.update(_quick_eval(model, items, val_pairs, cfg))
        history.append(entry)

    model.eval()
    return Checkpoint(config=cfg, model_state=model.state_dict(), history=history)


def _quick_eval(model, items, pairs, cfg) -> dict[str, float]:
    """Overall-attribute SRCC and FG accuracy on held-out pairs, for history."""
    image_ids = sorted({p.image_p for p in pairs} | {p.image_q for p in pairs})
    feats, scores = _image_features(model, items, image_ids, cfg)
    out: dict[str, float] = {}
    try:
        out["val_srcc"] = srcc(
            [scores[i][0] for i in image_ids], [items[i].mos[0] for i in image_ids]
        )
    except MetricError:
        out["val_srcc"] = float("nan")
    fine = [p for p in pairs if p.fine_grained]
    if fine:
        probs = _pairwise_probs(model, feats, fine)
        try:
            out["val_fg_acc"] = fg_acc(probs[:, 0], [p.labels["overall"] for p in fine])
        except MetricError:
            out["val_fg_acc"] = float("nan")
    return out


def evaluate_checkpoint(
    ckpt: Checkpoint,
    manifest: DatasetManifest,
    root: str | Path,
    subset: str = "test",
) -> MetricReport:
    """SRCC/PLCC per attribute plus FG accuracy on fine-grained pairs."""
    report, _ = evaluate_checkpoint_with_scores(ckpt, manifest, root, subset)
    return report


def evaluate_checkpoint_with_scores(
    ckpt: Checkpoint,
    manifest: DatasetManifest,
    root: str | Path,
    subset: str = "test",
) -> tuple[MetricReport, dict[str, np.ndarray]]:
    scenes = {s for s, sub in manifest.split.items() if sub == subset}
    if not scenes:
        raise DataError(f"manifest has no {subset!r} scenes")
    cfg = ckpt.config
    model = ckpt.build_model()

    annotated = annotation_pipeline(_restrict_manifest(manifest, scenes))
    mos_by_id = {m.image_id: m for m in annotated.mos_records}
    image_ids = sorted(mos_by_id)
    items = _preprocess_items(manifest, Path(root), mos_by_id, set(image_ids), cfg.resize)
    feats, scores = _image_features(model, items, image_ids, cfg)

    report = MetricReport(n_images=len(image_ids))
    for k, attr in enumerate(ATTRIBUTES):
        pred = [scores[i][k] for i in image_ids]
        true = [mos_by_id[i].mos[attr] for i in image_ids]
        try:
            report.srcc[attr] = srcc(pred, true)
            report.plcc[attr] = plcc(pred, true)
        except MetricError:
            report.srcc.setdefault(attr, float("nan"))
            report.plcc[attr] = float("nan")

    fine = [p for p in annotated.pairs if p.fine_grained]
    report.n_pairs = len(fine)
    if fine:
        probs = _pairwise_probs(model, feats, fine)
        for k, attr in enumerate(ATTRIBUTES):
            try:
                report.fg_acc[attr] = fg_acc(probs[:, k], [p.labels[attr] for p in fine])
            except MetricError:
                report.fg_acc[attr] = float("nan")
    return report, scores
