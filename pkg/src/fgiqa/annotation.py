"""MOS aggregation, annotator screening, pair construction and refinement."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    ATTRIBUTES,
    AnnotationRecord,
    DataError,
    DatasetManifest,
    MOSRecord,
    PairPreference,
)

VALID_VOTES = (0.0, 0.5, 1.0)


class ScreeningError(DataError):
    """Annotator screening removed everyone; thresholds are misconfigured."""


@dataclass(frozen=True)
class ScreeningReport:
    annotator_id: str
    plcc_to_mos: float | None
    retained: bool


@dataclass
class AnnotationResult:
    """Output of the full annotation pipeline for one manifest."""

    mos_records: list[MOSRecord]
    pairs: list[PairPreference]
    screening: list[ScreeningReport]

    @property
    def fine_grained_fraction(self) -> float:
        if not self.pairs:
            return 0.0
        return sum(p.fine_grained for p in self.pairs) / len(self.pairs)


def compute_mos(annotations: list[AnnotationRecord]) -> MOSRecord:
    """Arithmetic mean and population variance per attribute."""
    if not annotations:
        raise DataError("compute_mos requires at least one annotation")
    image_ids = {a.image_id for a in annotations}
    if len(image_ids) != 1:
        raise DataError(f"annotations span multiple images: {sorted(image_ids)}")
    mos, variance = {}, {}
    for attr in ATTRIBUTES:
        scores = np.array([a.scores[attr] for a in annotations], dtype=np.float64)
        mos[attr] = float(scores.mean())
        variance[attr] = float(scores.var())
    return MOSRecord(
        image_id=annotations[0].image_id, mos=mos, variance=variance, count=len(annotations)
    )


def _group_by_image(annotations: list[AnnotationRecord]) -> dict[str, list[AnnotationRecord]]:
    grouped: dict[str, list[AnnotationRecord]] = {}
    for a in annotations:
        grouped.setdefault(a.image_id, []).append(a)
    return grouped


def _plcc(x: np.ndarray, y: np.ndarray) -> float | None:
    if len(x) < 2 or x.std() == 0.0 or y.std() == 0.0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def screen_annotators(
    annotations: list[AnnotationRecord], threshold: float = 0.75
) -> tuple[list[ScreeningReport], list[AnnotationRecord]]:
    """Drop annotators whose overall scores correlate poorly with provisional MOS.

    Provisional MOS is computed from everyone; each annotator's Pearson
    correlation against it (overall attribute) decides retention. Annotators
    with undefined correlation (constant scores, < 2 images) are dropped.
    """
    annotator_ids = sorted({a.annotator_id for a in annotations})
    if len(annotator_ids) < 2:
        raise DataError("screening needs at least 2 annotators")
    by_image = _group_by_image(annotations)
    if len(by_image) < 2:
        raise DataError("screening needs at least 2 images")

    provisional = {iid: compute_mos(recs).mos["overall"] for iid, recs in by_image.items()}
    reports: list[ScreeningReport] = []
    retained_ids: set[str] = set()
    for aid in annotator_ids:
        own = {a.image_id: a.scores["overall"] for a in annotations if a.annotator_id == aid}
        ids = sorted(own)
        plcc = _plcc(
            np.array([own[i] for i in ids], dtype=np.float64),
            np.array([provisional[i] for i in ids], dtype=np.float64),
        )
        keep = plcc is not None and plcc >= threshold
        reports.append(ScreeningReport(annotator_id=aid, plcc_to_mos=plcc, retained=keep))
        if keep:
            retained_ids.add(aid)
    if not retained_ids:
        raise ScreeningError("all annotators rejected; check the screening threshold")
    retained = [a for a in annotations if a.annotator_id in retained_ids]
    return reports, retained


def build_scene_pairs(
    scene_mos: list[MOSRecord], scene_id: str, fine_threshold: float = 0.8
) -> list[PairPreference]:
    """All unordered pairs of one scene with MOS-derived indicator labels.

    Per attribute: 1 if the first image's MOS is higher, 0 if lower, 0.5 on a
    tie. The fine-grained flag follows the overall-MOS gap only.
    """
    if len(scene_mos) < 2:
        raise DataError(f"scene {scene_id!r} needs at least 2 images to build pairs")
    ordered = sorted(scene_mos, key=lambda m: m.image_id)
    pairs = []
    for rec_p, rec_q in itertools.combinations(ordered, 2):
        labels = {}
        for attr in ATTRIBUTES:
            sp, sq = rec_p.mos[attr], rec_q.mos[attr]
            labels[attr] = 1.0 if sp > sq else (0.0 if sp < sq else 0.5)
        delta = abs(rec_p.mos["overall"] - rec_q.mos["overall"])
        pairs.append(
            PairPreference(
                scene_id=scene_id,
                image_p=rec_p.image_id,
                image_q=rec_q.image_id,
                labels=labels,
                fine_grained=delta <= fine_threshold,
            )
        )
    return pairs


def refine_preference(pair: PairPreference, votes: list[float]) -> PairPreference:
    """Replace a fine-grained pair's overall label by the mean of pairwise votes."""
    if not pair.fine_grained:
        raise DataError("refine_preference applies only to fine-grained pairs")
    if not votes:
        raise DataError("refine_preference requires at least one vote")
    for v in votes:
        if v not in VALID_VOTES:
            raise DataError(f"vote must be one of {VALID_VOTES}, got {v}")
    labels = dict(pair.labels)
    labels["overall"] = float(np.mean(votes))
    return PairPreference(
        scene_id=pair.scene_id,
        image_p=pair.image_p,
        image_q=pair.image_q,
        labels=labels,
        fine_grained=True,
    )


def pair_votes_from_annotations(
    pair: PairPreference, annotations_by_image: dict[str, list[AnnotationRecord]]
) -> list[float]:
    """Simulated pairwise judgments: each annotator who scored both images
    votes by comparing their own overall scores."""
    p_scores = {a.annotator_id: a.scores["overall"] for a in annotations_by_image.get(pair.image_p, [])}
    q_scores = {a.annotator_id: a.scores["overall"] for a in annotations_by_image.get(pair.image_q, [])}
    votes = []
    for aid in sorted(set(p_scores) & set(q_scores)):
        sp, sq = p_scores[aid], q_scores[aid]
        votes.append(1.0 if sp > sq else (0.0 if sp < sq else 0.5))
    return votes


def annotation_pipeline(
    manifest: DatasetManifest,
    fine_threshold: float = 0.8,
    screening_threshold: float = 0.75,
) -> AnnotationResult:
    """Screen annotators, aggregate MOS, build pairs and refine fine-grained ones."""
    if not manifest.annotations:
        raise DataError("manifest has no annotations")
    reports, retained = screen_annotators(manifest.annotations, threshold=screening_threshold)
    by_image = _group_by_image(retained)

    scene_of = {s.image_id: s.scene_id for s in manifest.samples}
    mos_records = [compute_mos(by_image[iid]) for iid in sorted(by_image)]
    mos_by_scene: dict[str, list[MOSRecord]] = {}
    for rec in mos_records:
        mos_by_scene.setdefault(scene_of[rec.image_id], []).append(rec)

    pairs: list[PairPreference] = []
    for scene_id in sorted(mos_by_scene):
        scene_recs = mos_by_scene[scene_id]
        if len(scene_recs) < 2:
            continue
        for pair in build_scene_pairs(scene_recs, scene_id, fine_threshold=fine_threshold):
            if pair.fine_grained:
                votes = pair_votes_from_annotations(pair, by_image)
                if votes:
                    pair = refine_preference(pair, votes)
            pairs.append(pair)
    return AnnotationResult(mos_records=mos_records, pairs=pairs, screening=reports)


def save_pairs(pairs: list[PairPreference], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {
                "scene_id": p.scene_id,
                "image_p": p.image_p,
                "image_q": p.image_q,
                "labels": p.labels,
                "fine_grained": p.fine_grained,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_pairs(path: str | Path) -> list[PairPreference]:
    pairs = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pairs.append(
                    PairPreference(
                        scene_id=rec["scene_id"],
                        image_p=rec["image_p"],
                        image_q=rec["image_q"],
                        labels={k: float(v) for k, v in rec["labels"].items()},
                        fine_grained=bool(rec["fine_grained"]),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed pair record: {exc}") from exc
    return pairs
