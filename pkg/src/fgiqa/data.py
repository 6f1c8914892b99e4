"""Core domain types, manifest I/O and scene-level splitting."""

from __future__ import annotations

import json
import math
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

ATTRIBUTES = ("overall", "face", "sharpness", "exposure", "noise")

PARAM_NAMES = (
    "aperture",
    "shutter",
    "iso",
    "white_balance",
    "contrast",
    "saturation",
    "sharpness",
)

Box = tuple[float, float, float, float]


class DataError(Exception):
    """Invalid data: bad records, broken invariants, dangling references."""


class ManifestError(DataError):
    """Manifest file could not be loaded or fails validation."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise DataError(msg)


@dataclass(frozen=True)
class CameraParameters:
    """The 7-tuple of camera settings attached to a capture."""

    aperture: float
    shutter: float
    iso: float
    white_balance: float
    contrast: float
    saturation: float
    sharpness: float

    def __post_init__(self) -> None:
        for name in PARAM_NAMES:
            value = getattr(self, name)
            _require(math.isfinite(value), f"camera parameter {name} must be finite, got {value}")
        for name in ("aperture", "shutter", "iso", "white_balance"):
            _require(getattr(self, name) > 0, f"camera parameter {name} must be > 0")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in PARAM_NAMES)

    @classmethod
    def from_sequence(cls, values) -> "CameraParameters":
        values = list(values)
        _require(len(values) == 7, f"expected 7 parameter values, got {len(values)}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class SampleRecord:
    """Manifest entry for one image: metadata plus a path to the pixels."""

    image_id: str
    scene_id: str
    path: str
    width: int
    height: int
    human_boxes: tuple[Box, ...] = ()
    params: CameraParameters | None = None

    def __post_init__(self) -> None:
        _require(self.width > 0 and self.height > 0, f"{self.image_id}: non-positive image size")
        kept = []
        for box in self.human_boxes:
            x0, y0, x1, y1 = box
            x0, y0 = max(0.0, x0), max(0.0, y0)
            x1, y1 = min(float(self.width), x1), min(float(self.height), y1)
            if x0 < x1 and y0 < y1:
                kept.append((x0, y0, x1, y1))
            else:
                warnings.warn(
                    f"{self.image_id}: dropping zero-area box {box}", stacklevel=2
                )
        object.__setattr__(self, "human_boxes", tuple(kept))


@dataclass
class ImageSample:
    """An image with its metadata; the unit flowing through the model."""

    image_id: str
    scene_id: str
    pixels: np.ndarray  # H x W x 3, float in [0, 1]
    human_boxes: tuple[Box, ...] = ()
    params: CameraParameters | None = None

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        _require(px.ndim == 3 and px.shape[2] == 3, f"{self.image_id}: pixels must be HxWx3")
        _require(np.all(np.isfinite(px)), f"{self.image_id}: non-finite pixel values")
        _require(
            px.min() >= 0.0 and px.max() <= 1.0,
            f"{self.image_id}: pixel values outside [0, 1]",
        )
        self.pixels = px
        h, w = px.shape[:2]
        for box in self.human_boxes:
            x0, y0, x1, y1 = box
            _require(
                0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h,
                f"{self.image_id}: box {box} outside {w}x{h} image",
            )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class AnnotationRecord:
    """One annotator's 1-5 scores for one image, all five attributes."""

    annotator_id: str
    image_id: str
    scores: dict[str, int]

    def __post_init__(self) -> None:
        for attr in ATTRIBUTES:
            _require(attr in self.scores, f"annotation missing attribute {attr!r}")
            s = self.scores[attr]
            _require(
                float(s).is_integer() and 1 <= s <= 5,
                f"score for {attr} must be an integer in [1, 5], got {s}",
            )


@dataclass(frozen=True)
class MOSRecord:
    """Per-image mean opinion scores with annotation variance."""

    image_id: str
    mos: dict[str, float]
    variance: dict[str, float]
    count: int

    def __post_init__(self) -> None:
        _require(self.count >= 1, "MOS count must be >= 1")
        for attr in ATTRIBUTES:
            _require(attr in self.mos and attr in self.variance, f"MOS missing {attr!r}")
            _require(1.0 <= self.mos[attr] <= 5.0, f"MOS for {attr} outside [1, 5]")
            _require(self.variance[attr] >= 0.0, f"variance for {attr} negative")


_COARSE_LABELS = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class PairPreference:
    """An ordered within-scene image pair with per-attribute preference labels."""

    scene_id: str
    image_p: str
    image_q: str
    labels: dict[str, float]
    fine_grained: bool

    def __post_init__(self) -> None:
        _require(self.image_p != self.image_q, "pair must reference two distinct images")
        for attr in ATTRIBUTES:
            _require(attr in self.labels, f"pair missing label for {attr!r}")
            c = self.labels[attr]
            _require(0.0 <= c <= 1.0, f"label for {attr} outside [0, 1]: {c}")
            if not self.fine_grained:
                _require(
                    c in _COARSE_LABELS,
                    f"coarse pair label for {attr} must be 0, 0.5 or 1, got {c}",
                )


@dataclass
class DatasetManifest:
    """Samples, annotations and the scene-level split."""

    samples: list[SampleRecord] = field(default_factory=list)
    annotations: list[AnnotationRecord] = field(default_factory=list)
    split: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        seen: set[str] = set()
        for s in self.samples:
            _require(s.image_id not in seen, f"duplicate image_id {s.image_id!r}")
            seen.add(s.image_id)
        for a in self.annotations:
            if a.image_id not in seen:
                raise ManifestError(
                    f"annotation references unknown image_id {a.image_id!r}"
                )
        scenes = self.scene_ids()
        for scene_id, subset in self.split.items():
            _require(subset in ("train", "test"), f"unknown split subset {subset!r}")
            _require(scene_id in scenes, f"split references unknown scene {scene_id!r}")

    def scene_ids(self) -> set[str]:
        return {s.scene_id for s in self.samples}

    def samples_by_id(self) -> dict[str, SampleRecord]:
        return {s.image_id: s for s in self.samples}

    def scenes(self, subset: str | None = None) -> dict[str, list[SampleRecord]]:
        """Group samples by scene, optionally restricted to one split subset."""
        grouped: dict[str, list[SampleRecord]] = {}
        for s in self.samples:
            if subset is not None and self.split.get(s.scene_id) != subset:
                continue
            grouped.setdefault(s.scene_id, []).append(s)
        return grouped


def _sample_to_json(s: SampleRecord) -> dict:
    rec: dict = {
        "kind": "sample",
        "image_id": s.image_id,
        "scene_id": s.scene_id,
        "path": s.path,
        "width": s.width,
        "height": s.height,
        "boxes": [c for box in s.human_boxes for c in box],
    }
    if s.params is not None:
        rec["params"] = list(s.params.as_tuple())
    return rec


def _sample_from_json(rec: dict) -> SampleRecord:
    flat = rec.get("boxes", [])
    if len(flat) % 4 != 0:
        raise DataError("boxes must be a flat list with length divisible by 4")
    boxes = tuple(tuple(flat[i : i + 4]) for i in range(0, len(flat), 4))
    params = rec.get("params")
    return SampleRecord(
        image_id=rec["image_id"],
        scene_id=rec["scene_id"],
        path=rec["path"],
        width=int(rec["width"]),
        height=int(rec["height"]),
        human_boxes=boxes,
        params=CameraParameters.from_sequence(params) if params is not None else None,
    )


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load a line-delimited manifest; errors name the offending line."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    samples: list[SampleRecord] = []
    annotations: list[AnnotationRecord] = []
    split: dict[str, str] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                kind = rec.get("kind")
                if kind == "sample":
                    samples.append(_sample_from_json(rec))
                elif kind == "annotation":
                    annotations.append(
                        AnnotationRecord(
                            annotator_id=rec["annotator_id"],
                            image_id=rec["image_id"],
                            scores={k: int(v) for k, v in rec["scores"].items()},
                        )
                    )
                elif kind == "split":
                    scene_id = rec["scene_id"]
                    subset = rec["subset"]
                    if scene_id in split and split[scene_id] != subset:
                        raise DataError(
                            f"scene {scene_id!r} assigned to both "
                            f"{split[scene_id]!r} and {subset!r}"
                        )
                    split[scene_id] = subset
                else:
                    raise DataError(f"unknown record kind {kind!r}")
            except ManifestError:
                raise
            except (DataError, KeyError, ValueError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return DatasetManifest(samples=samples, annotations=annotations, split=split)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in manifest.samples:
            fh.write(json.dumps(_sample_to_json(s), sort_keys=True) + "\n")
        for a in manifest.annotations:
            rec = {
                "kind": "annotation",
                "annotator_id": a.annotator_id,
                "image_id": a.image_id,
                "scores": a.scores,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for scene_id in sorted(manifest.split):
            rec = {"kind": "split", "scene_id": scene_id, "subset": manifest.split[scene_id]}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def split_scenes(
    manifest: DatasetManifest, train_fraction: float, seed: int
) -> DatasetManifest:
    """Assign scenes to train/test reproducibly; never leaks a scene across splits."""
    _require(0.0 < train_fraction < 1.0, "train_fraction must be in (0, 1)")
    scenes = sorted(manifest.scene_ids())
    if len(scenes) < 2:
        raise DataError("need at least 2 scenes to split")
    rng = random.Random(seed)
    rng.shuffle(scenes)
    n_train = round(len(scenes) * train_fraction)
    n_train = min(max(n_train, 1), len(scenes) - 1)
    split = {sid: ("train" if i < n_train else "test") for i, sid in enumerate(scenes)}
    return DatasetManifest(
        samples=list(manifest.samples),
        annotations=list(manifest.annotations),
        split=split,
    )


def load_image(record: SampleRecord, root: str | Path) -> ImageSample:
    """Read the sample's image file and attach manifest metadata."""
    path = Path(root) / record.path
    if not path.is_file():
        raise DataError(f"image file not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return ImageSample(
        image_id=record.image_id,
        scene_id=record.scene_id,
        pixels=arr,
        human_boxes=record.human_boxes,
        params=record.params,
    )


def save_image(pixels: np.ndarray, path: str | Path) -> None:
    """Write pixels in [0, 1] as an 8-bit lossless PNG."""
    arr = np.clip(np.asarray(pixels) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(Path(path), format="PNG")
