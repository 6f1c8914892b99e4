"""Camera parameter ranges and normalization shared by synthesis and the model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataError, CameraParameters, PARAM_NAMES

# Parameters whose physical range spans decades are normalized on a log scale.
LOG_SCALED = ("shutter", "iso", "white_balance")


@dataclass(frozen=True)
class ParameterRange:
    lo: float
    hi: float
    log_scale: bool = False

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise DataError(f"invalid parameter range [{self.lo}, {self.hi}]")
        if self.log_scale and self.lo <= 0:
            raise DataError("log-scaled range requires positive bounds")

    def normalize(self, value: float) -> float:
        """Map value to [0, 1], clamped; log-scale min-max when configured."""
        if self.log_scale:
            if value <= 0:
                raise DataError(f"log-scaled parameter must be > 0, got {value}")
            t = (math.log(value) - math.log(self.lo)) / (math.log(self.hi) - math.log(self.lo))
        else:
            t = (value - self.lo) / (self.hi - self.lo)
        return min(max(t, 0.0), 1.0)

    def denormalize(self, t: float) -> float:
        t = min(max(t, 0.0), 1.0)
        if self.log_scale:
            return math.exp(math.log(self.lo) + t * (math.log(self.hi) - math.log(self.lo)))
        return self.lo + t * (self.hi - self.lo)


def default_ranges() -> dict[str, ParameterRange]:
    """Documented default range table for the seven supported settings."""
    return {
        "aperture": ParameterRange(1.4, 16.0),
        "shutter": ParameterRange(1.0 / 4000.0, 1.0 / 30.0, log_scale=True),
        "iso": ParameterRange(100.0, 6400.0, log_scale=True),
        "white_balance": ParameterRange(2800.0, 8000.0, log_scale=True),
        "contrast": ParameterRange(0.0, 100.0),
        "saturation": ParameterRange(0.0, 100.0),
        "sharpness": ParameterRange(0.0, 100.0),
    }


def normalize_params(
    p: CameraParameters, ranges: dict[str, ParameterRange] | None = None
) -> np.ndarray:
    """Normalized 7-vector in [0, 1], fixed parameter order."""
    ranges = ranges if ranges is not None else default_ranges()
    out = np.empty(7, dtype=np.float64)
    for i, name in enumerate(PARAM_NAMES):
        out[i] = ranges[name].normalize(getattr(p, name))
    return out


def save_ranges(ranges: dict[str, ParameterRange], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for name in PARAM_NAMES:
            r = ranges[name]
            fh.write(f"{name}.min = {r.lo!r}\n")
            fh.write(f"{name}.max = {r.hi!r}\n")


def load_ranges(path: str | Path) -> dict[str, ParameterRange]:
    values: dict[str, float] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, raw = line.partition("=")
            values[key.strip()] = float(raw.strip())
    ranges = {}
    for name in PARAM_NAMES:
        try:
            lo, hi = values[f"{name}.min"], values[f"{name}.max"]
        except KeyError as exc:
            raise DataError(f"range table missing entry for {name}") from exc
        ranges[name] = ParameterRange(lo, hi, log_scale=name in LOG_SCALED)
    return ranges
