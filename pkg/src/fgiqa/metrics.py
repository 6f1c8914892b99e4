"""Correlation metrics, fine-grained accuracy and gMAD pair selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .data import ATTRIBUTES, DataError


class MetricError(DataError):
    """Metric is undefined for the given inputs (degenerate or empty)."""


def _as_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise MetricError(f"{name} must be one-dimensional")
    return arr


def plcc(x, y) -> float:
    """Pearson linear correlation; raises on zero variance."""
    xa, ya = _as_array(x, "x"), _as_array(y, "y")
    if len(xa) != len(ya) or len(xa) < 3:
        raise MetricError("plcc needs two equal-length lists of >= 3 values")
    if xa.std() == 0.0 or ya.std() == 0.0:
        raise MetricError("plcc undefined for zero-variance input")
    return float(np.corrcoef(xa, ya)[0, 1])


def srcc(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    xa, ya = _as_array(x, "x"), _as_array(y, "y")
    if len(xa) != len(ya) or len(xa) < 3:
        raise MetricError("srcc needs two equal-length lists of >= 3 values")
    rx = rankdata(xa, method="average")
    ry = rankdata(ya, method="average")
    if rx.std() == 0.0 or ry.std() == 0.0:
        raise MetricError("srcc undefined when all ranks tie")
    return float(np.corrcoef(rx, ry)[0, 1])


def fg_acc(predictions, labels) -> float:
    """Directional accuracy over pairs; equivalence pairs (c = 0.5) are
    excluded from the denominator."""
    preds = _as_array(predictions, "predictions")
    labs = _as_array(labels, "labels")
    if len(preds) != len(labs):
        raise MetricError("predictions and labels must align")
    counted = labs != 0.5
    if not counted.any():
        raise MetricError("fg_acc undefined: every pair is an equivalence pair")
    correct = np.where(labs[counted] > 0.5, preds[counted] > 0.5, preds[counted] < 0.5)
    return float(correct.mean())


def score_based_fg_acc(scores: dict[str, float], pairs) -> float:
    """FG accuracy of a plain scorer: predicted preference is the score
    indicator, with score ties mapping to 0.5 (counted incorrect)."""
    preds, labs = [], []
    for pair in pairs:
        sp, sq = scores[pair.image_p], scores[pair.image_q]
        preds.append(1.0 if sp > sq else (0.0 if sp < sq else 0.5))
        labs.append(pair.labels["overall"])
    return fg_acc(preds, labs)


def gmad_select(
    defender_scores,
    attacker_scores,
    n_levels: int,
    tol: float | None = None,
) -> list[tuple[int, int]]:
    """Maximum-differentiation pairs: per defender-score level, the image pair
    on which the attacker disagrees the most.

    The defender range is divided into ``n_levels`` bin centers; images whose
    defender score is within ``tol`` of a center compete, and the pair with
    the largest attacker-score difference wins (ties broken by smallest index
    pair). Bins with fewer than two images are skipped.
    """
    d = _as_array(defender_scores, "defender_scores")
    a = _as_array(attacker_scores, "attacker_scores")
    if len(d) != len(a):
        raise MetricError("defender and attacker score lists must align")
    if n_levels < 1:
        raise MetricError("n_levels must be >= 1")
    lo, hi = d.min(), d.max()
    centers = np.linspace(lo, hi, n_levels) if n_levels > 1 else np.array([(lo + hi) / 2])
    if tol is None:
        tol = (hi - lo) / (2 * max(n_levels - 1, 1)) if hi > lo else 0.0

    selected: list[tuple[int, int]] = []
    for center in centers:
        members = np.flatnonzero(np.abs(d - center) <= tol)
        if len(members) < 2:
            continue
        best: tuple[int, int] | None = None
        best_diff = -1.0
        for ii in range(len(members)):
            for jj in range(ii + 1, len(members)):
                i, j = int(members[ii]), int(members[jj])
                diff = abs(a[i] - a[j])
                if diff > best_diff:
                    best, best_diff = (i, j), diff
        if best is not None:
            selected.append(best)
    return selected


@dataclass
class MetricReport:
    """Per-attribute SRCC/PLCC/FG-ACC plus evaluated counts."""

    srcc: dict[str, float] = field(default_factory=dict)
    plcc: dict[str, float] = field(default_factory=dict)
    fg_acc: dict[str, float] = field(default_factory=dict)
    n_images: int = 0
    n_pairs: int = 0

    def to_text(self) -> str:
        lines = [f"count images {self.n_images}", f"count pairs {self.n_pairs}"]
        for metric_name, table in (("srcc", self.srcc), ("plcc", self.plcc), ("fg_acc", self.fg_acc)):
            for attr in ATTRIBUTES:
                if attr in table:
                    lines.append(f"{metric_name} {attr} {table[attr]:.10f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        report = cls()
        for line in text.splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "count":
                if parts[1] == "images":
                    report.n_images = int(parts[2])
                else:
                    report.n_pairs = int(parts[2])
            else:
                getattr(report, parts[0])[parts[1]] = float(parts[2])
        return report

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MetricReport":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))
