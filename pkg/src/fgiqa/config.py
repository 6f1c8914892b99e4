"""Flat key/value config files for training and parameter ranges."""

from __future__ import annotations

from pathlib import Path

from .data import DataError, PARAM_NAMES
from .model.hfe import BackboneConfig
from .params import LOG_SCALED, ParameterRange, default_ranges
from .training import TrainConfig

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}

_INT_KEYS = {"batch_size", "epochs", "resize", "crop", "seed", "node_dim"}
_FLOAT_KEYS = {
    "learning_rate_max",
    "lambda_reg",
    "lambda_rank",
    "weight_decay",
    "cosine_floor",
    "val_fraction",
}
_BOOL_KEYS = {"use_gcpf"}
_STR_KEYS = {"schedule"}


def load_flat(path: str | Path) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def train_config_from_flat(flat: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    base = base if base is not None else TrainConfig()
    kwargs = base.to_dict()
    backbone = dict(kwargs.pop("backbone"))
    for key, raw in flat.items():
        if key in _INT_KEYS:
            kwargs[key] = int(raw)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(raw)
        elif key in _BOOL_KEYS:
            try:
                kwargs[key] = _BOOL[raw.lower()]
            except KeyError:
                raise DataError(f"config key {key}: expected a boolean, got {raw!r}")
        elif key in _STR_KEYS:
            kwargs[key] = raw
        elif key == "backbone.channels":
            backbone["channels"] = int(raw)
        elif key == "backbone.depth":
            backbone["depth"] = int(raw)
        elif key == "backbone.weights_path":
            backbone["weights_path"] = raw or None
        elif key.endswith(".min") or key.endswith(".max"):
            continue  # range-table entry, handled by ranges_from_flat
        else:
            raise DataError(f"unknown config key {key!r}")
    kwargs["backbone"] = BackboneConfig(**backbone)
    return TrainConfig.from_dict(kwargs)


def ranges_from_flat(flat: dict[str, str]) -> dict[str, ParameterRange]:
    """Range table from a flat config, defaulting unlisted parameters."""
    ranges = default_ranges()
    for name in PARAM_NAMES:
        lo_key, hi_key = f"{name}.min", f"{name}.max"
        if lo_key in flat or hi_key in flat:
            lo = float(flat.get(lo_key, ranges[name].lo))
            hi = float(flat.get(hi_key, ranges[name].hi))
            ranges[name] = ParameterRange(lo, hi, log_scale=name in LOG_SCALED)
    return ranges
