from __future__ import annotations

import numpy as np
import pytest

from fgiqa.data import (
    ATTRIBUTES,
    AnnotationRecord,
    CameraParameters,
    DatasetManifest,
    MOSRecord,
    SampleRecord,
)


@pytest.fixture
def params_mid() -> CameraParameters:
    return CameraParameters(
        aperture=5.6,
        shutter=1 / 250,
        iso=800.0,
        white_balance=5000.0,
        contrast=50.0,
        saturation=50.0,
        sharpness=50.0,
    )


def make_annotation(annotator_id: str, image_id: str, score: int | dict) -> AnnotationRecord:
    if isinstance(score, int):
        score = {attr: score for attr in ATTRIBUTES}
    return AnnotationRecord(annotator_id=annotator_id, image_id=image_id, scores=score)


def make_mos(image_id: str, overall: float, variance: float = 0.0, **attrs) -> MOSRecord:
    mos = {attr: attrs.get(attr, overall) for attr in ATTRIBUTES}
    mos["overall"] = overall
    return MOSRecord(
        image_id=image_id,
        mos=mos,
        variance={attr: variance for attr in ATTRIBUTES},
        count=3,
    )


def make_sample(image_id: str, scene_id: str = "scene0", **kw) -> SampleRecord:
    defaults = dict(path=f"images/{image_id}.png", width=96, height=96)
    defaults.update(kw)
    return SampleRecord(image_id=image_id, scene_id=scene_id, **defaults)


@pytest.fixture
def tiny_manifest() -> DatasetManifest:
    """Two scenes, two images each, three annotators who agree imperfectly."""
    samples = [
        make_sample("a0", "sceneA"),
        make_sample("a1", "sceneA"),
        make_sample("b0", "sceneB"),
        make_sample("b1", "sceneB"),
    ]
    rng = np.random.default_rng(0)
    base = {"a0": 4, "a1": 3, "b0": 2, "b1": 5}
    annotations = []
    for k in range(3):
        for iid, score in base.items():
            jitter = int(rng.integers(-1, 2)) if k == 2 else 0
            s = int(np.clip(score + jitter, 1, 5))
            annotations.append(make_annotation(f"ann{k}", iid, s))
    return DatasetManifest(
        samples=samples,
        annotations=annotations,
        split={"sceneA": "train", "sceneB": "test"},
    )
