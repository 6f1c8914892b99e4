"""Procedural desk-scale dataset: parameter-controlled distortions plus
simulated annotators, so the whole pipeline is testable without real captures."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import (
    ATTRIBUTES,
    AnnotationRecord,
    CameraParameters,
    DataError,
    DatasetManifest,
    ImageSample,
    PARAM_NAMES,
    SampleRecord,
    save_image,
    split_scenes,
)
from .params import ParameterRange, default_ranges, normalize_params

# Attribute penalties are smooth monotone functions of normalized parameter
# deviations; the mixing weights below define the latent ground truth.
_SHARP_W = {"aperture": 0.5, "sharpness": 0.9}
_EXPOSURE_W = {"shutter": 0.5, "iso": 0.4, "aperture": 0.3}
_NOISE_W = {"iso": 1.0}
_FACE_EXTRA = 2.0
_PENALTY_GAIN = 4.5
_PENALTY_SLOPE = 1.6
_BASE_LUMINANCE = 0.46  # shared clean-render mean brightness
_GAIN_SLOPE = 2.0  # brightness factor exp(_GAIN_SLOPE * exposure deviation)


@dataclass(frozen=True)
class SceneSpec:
    """One synthetic scene: an optimum in parameter space plus a face location."""

    scene_id: str
    base_seed: int
    optimal_params: CameraParameters
    face_box: tuple[float, float, float, float]  # normalized, within unit square
    n_variants: int = 10

    def __post_init__(self) -> None:
        if self.n_variants < 2:
            raise DataError("a scene needs at least 2 variants")
        x0, y0, x1, y1 = self.face_box
        if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
            raise DataError(f"face_box {self.face_box} outside the unit square")


@dataclass(frozen=True)
class TrueQuality:
    """Latent per-attribute quality in [1, 5] used as simulation ground truth."""

    values: dict[str, float]

    def __post_init__(self) -> None:
        for attr in ATTRIBUTES:
            v = self.values[attr]
            if not 1.0 <= v <= 5.0:
                raise DataError(f"true quality for {attr} outside [1, 5]: {v}")

    def __getitem__(self, attr: str) -> float:
        return self.values[attr]


def _deviations(
    params: CameraParameters,
    optimal: CameraParameters,
    ranges: dict[str, ParameterRange],
) -> dict[str, float]:
    p = normalize_params(params, ranges)
    o = normalize_params(optimal, ranges)
    return {name: float(p[i] - o[i]) for i, name in enumerate(PARAM_NAMES)}


def _penalty(d: float) -> float:
    return _PENALTY_GAIN * np.tanh(_PENALTY_SLOPE * d)


def _quality(d: float) -> float:
    return float(np.clip(5.0 - _penalty(d), 1.0, 5.0))


def true_quality(
    params: CameraParameters,
    optimal: CameraParameters,
    ranges: dict[str, ParameterRange] | None = None,
) -> TrueQuality:
    """Latent quality of a configuration relative to the scene optimum."""
    ranges = ranges if ranges is not None else default_ranges()
    dev = {k: abs(v) for k, v in _deviations(params, optimal, ranges).items()}
    q_sharp = _quality(sum(w * dev[k] for k, w in _SHARP_W.items()))
    q_exp = _quality(sum(w * dev[k] for k, w in _EXPOSURE_W.items()))
    q_noise = _quality(sum(w * dev[k] for k, w in _NOISE_W.items()))
    mean_dev = sum(dev.values()) / len(dev)
    q_face = float(np.clip(0.5 * (q_sharp + q_exp) - _FACE_EXTRA * mean_dev, 1.0, 5.0))
    q_overall = 0.4 * q_face + 0.2 * (q_sharp + q_exp + q_noise)
    return TrueQuality(
        values={
            "overall": float(np.clip(q_overall, 1.0, 5.0)),
            "face": q_face,
            "sharpness": q_sharp,
            "exposure": q_exp,
            "noise": q_noise,
        }
    )


def _noise_seed(base_seed: int, params: CameraParameters) -> int:
    payload = struct.pack("<q7d", base_seed, *params.as_tuple())
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def _clean_render(scene: SceneSpec, size: int) -> np.ndarray:
    """Deterministic procedural content: gradient, textured block, face ellipse."""
    rng = np.random.default_rng(scene.base_seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)

    angle = rng.uniform(0, 2 * np.pi)
    # Centered ramp: spatial mean is exactly 0.5 for every gradient angle,
    # so the baseline brightness does not depend on the drawn direction.
    ramp = 0.5 + 0.5 * (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5))
    # Random hues at a fixed mean luminance: the per-channel offsets are
    # centered so every scene has the same baseline brightness, which keeps
    # exposure judgments transferable across scenes.
    off0 = rng.uniform(-1.0, 1.0, size=3)
    off1 = rng.uniform(-1.0, 1.0, size=3)
    c0 = 0.30 + 0.10 * (off0 - off0.mean())
    c1 = 0.62 + 0.10 * (off1 - off1.mean())
    img = ramp[..., None] * c1 + (1.0 - ramp[..., None]) * c0

    # Textured rectangle somewhere in the frame; texture is smoothed noise so
    # blur distortion has measurable effect outside the face too.
    rx0, ry0 = rng.uniform(0.0, 0.55, size=2)
    rx1, ry1 = rx0 + 0.35, ry0 + 0.35
    mask = (xx >= rx0) & (xx < rx1) & (yy >= ry0) & (yy < ry1)
    texture = gaussian_filter(rng.standard_normal((size, size)), sigma=1.0)
    texture = 0.5 + 0.15 * texture / max(texture.std(), 1e-9)
    offt = rng.uniform(-1.0, 1.0, size=3)
    tex_color = 0.55 + 0.15 * (offt - offt.mean())
    img[mask] = 0.5 * img[mask] + 0.5 * (texture[mask][:, None] * tex_color)

    # Elliptical "face" with fine checker texture inside the face box.
    fx0, fy0, fx1, fy1 = scene.face_box
    cx, cy = (fx0 + fx1) / 2.0, (fy0 + fy1) / 2.0
    ax, ay = max((fx1 - fx0) / 2.0, 1e-6), max((fy1 - fy0) / 2.0, 1e-6)
    ellipse = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0
    skin = np.array([0.87, 0.65, 0.5]) + rng.uniform(-0.05, 0.05, size=3)
    img[ellipse] = skin
    checker = ((np.floor(xx * size / 3.0) + np.floor(yy * size / 3.0)) % 2) * 0.12
    img[ellipse] += (checker[ellipse] - 0.06)[:, None]

    fine = gaussian_filter(rng.standard_normal((size, size)), sigma=0.6)
    img += 0.05 * fine[..., None] / max(np.abs(fine).max(), 1e-9)
    # Pin the clean render to a fixed mean luminance. Face and texture
    # placement would otherwise shift the baseline brightness per scene,
    # which is indistinguishable from an exposure error in the pixels.
    img += _BASE_LUMINANCE - img.mean()
    return np.clip(img, 0.0, 1.0)


def render_image(
    scene: SceneSpec,
    params: CameraParameters,
    ranges: dict[str, ParameterRange] | None = None,
    image_size: int = 96,
    distortion_strength: float = 1.0,
) -> ImageSample:
    """Render the scene under a parameter configuration.

    Deviations from the scene optimum drive blur, gain, color cast and noise;
    at the optimum the output is exactly the clean procedural render.
    ``distortion_strength`` scales how visible the deviations are without
    changing the latent quality, which makes ablation datasets possible where
    quality is knowable from parameters but hard to see in pixels.
    """
    if distortion_strength < 0:
        raise DataError("distortion_strength must be >= 0")
    ranges = ranges if ranges is not None else default_ranges()
    img = _clean_render(scene, image_size)
    signed = _deviations(params, scene.optimal_params, ranges)
    dev = {k: abs(v) for k, v in signed.items()}
    g = distortion_strength

    d_sharp = sum(w * dev[k] for k, w in _SHARP_W.items())
    if g * d_sharp > 0:
        sigma = 5.0 * g * d_sharp * image_size / 96.0
        img = np.stack([gaussian_filter(img[..., c], sigma=sigma) for c in range(3)], axis=-1)

    s_exp = sum(w * signed[k] for k, w in _EXPOSURE_W.items())
    if g * s_exp != 0:
        img = img * np.exp(_GAIN_SLOPE * g * s_exp)

    # Post-processing settings barely move the latent quality, so their pixel
    # footprint is kept small relative to blur/gain/noise.
    if signed["contrast"] != 0:
        img = 0.5 + (img - 0.5) * (1.0 + 0.2 * g * signed["contrast"])

    if signed["white_balance"] != 0:
        img[..., 0] *= 1.0 + 0.08 * g * signed["white_balance"]
        img[..., 2] *= 1.0 - 0.08 * g * signed["white_balance"]

    if signed["saturation"] != 0:
        gray = img.mean(axis=-1, keepdims=True)
        img = gray + (img - gray) * (1.0 + 0.2 * g * signed["saturation"])

    d_noise = sum(w * dev[k] for k, w in _NOISE_W.items())
    if g * d_noise > 0:
        noise_rng = np.random.default_rng(_noise_seed(scene.base_seed, params))
        img = img + noise_rng.normal(0.0, 0.30 * g * d_noise, size=img.shape)

    img = np.clip(img, 0.0, 1.0)
    fx0, fy0, fx1, fy1 = scene.face_box
    box = (fx0 * image_size, fy0 * image_size, fx1 * image_size, fy1 * image_size)
    return ImageSample(
        image_id=f"{scene.scene_id}_render",
        scene_id=scene.scene_id,
        pixels=img,
        human_boxes=(box,),
        params=params,
    )


def simulate_annotations(
    tq: TrueQuality,
    image_id: str,
    n_annotators: int,
    noise_sd: float,
    seed: int,
) -> list[AnnotationRecord]:
    """Noisy integer 1-5 scores around the latent quality, one per annotator."""
    if n_annotators < 1:
        raise DataError("need at least one annotator")
    if noise_sd < 0:
        raise DataError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_annotators):
        scores = {}
        for attr in ATTRIBUTES:
            raw = tq[attr] + (rng.normal(0.0, noise_sd) if noise_sd > 0 else 0.0)
            scores[attr] = int(np.clip(np.rint(raw), 1, 5))
        records.append(
            AnnotationRecord(annotator_id=f"a{i:02d}", image_id=image_id, scores=scores)
        )
    return records


def _sample_scene_spec(
    scene_id: str, rng: np.random.Generator, ranges, opt_spread: float = 0.15
) -> SceneSpec:
    if not 0.0 <= opt_spread <= 0.5:
        raise DataError("opt_spread must be in [0, 0.5]")
    norm_opt = rng.uniform(0.5 - opt_spread, 0.5 + opt_spread, size=7)
    optimal = CameraParameters.from_sequence(
        ranges[name].denormalize(norm_opt[i]) for i, name in enumerate(PARAM_NAMES)
    )
    w, h = rng.uniform(0.2, 0.4, size=2)
    x0 = rng.uniform(0.05, 0.95 - w)
    y0 = rng.uniform(0.05, 0.95 - h)
    return SceneSpec(
        scene_id=scene_id,
        base_seed=int(rng.integers(0, 2**62)),
        optimal_params=optimal,
        face_box=(float(x0), float(y0), float(x0 + w), float(y0 + h)),
    )


def _variant_params(
    spec: SceneSpec, rng: np.random.Generator, ranges: dict[str, ParameterRange]
) -> CameraParameters:
    """Deviate 1-3 parameters from the optimum by a random normalized amount."""
    norm_opt = normalize_params(spec.optimal_params, ranges)
    out = norm_opt.copy()
    n_deviate = int(rng.integers(1, 4))
    idx = rng.choice(7, size=n_deviate, replace=False)
    for i in idx:
        step = rng.uniform(0.05, 0.6) * (1.0 if rng.random() < 0.5 else -1.0)
        out[i] = float(np.clip(norm_opt[i] + step, 0.0, 1.0))
    return CameraParameters.from_sequence(
        ranges[name].denormalize(out[i]) for i, name in enumerate(PARAM_NAMES)
    )


def generate_dataset(
    out_dir: str | Path,
    n_scenes: int = 20,
    variants_per_scene: int = 10,
    n_annotators: int = 16,
    noise_sd: float = 0.3,
    seed: int = 0,
    image_size: int = 96,
    with_params: bool = True,
    train_fraction: float | None = None,
    ranges: dict[str, ParameterRange] | None = None,
    distortion_strength: float = 1.0,
    opt_spread: float = 0.15,
) -> DatasetManifest:
    """Write images plus a manifest for a fully synthetic dataset."""
    if n_scenes < 1 or variants_per_scene < 2:
        raise DataError("need >= 1 scene and >= 2 variants per scene")
    ranges = ranges if ranges is not None else default_ranges()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)

    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_scenes)]
    samples: list[SampleRecord] = []
    annotations: list[AnnotationRecord] = []
    for i, rng in enumerate(streams):
        spec = _sample_scene_spec(f"scene{i:03d}", rng, ranges, opt_spread=opt_spread)
        for j in range(variants_per_scene):
            params = (
                spec.optimal_params if j == 0 else _variant_params(spec, rng, ranges)
            )
            image_id = f"{spec.scene_id}_v{j:02d}"
            sample = render_image(
                spec, params, ranges, image_size=image_size,
                distortion_strength=distortion_strength,
            )
            rel_path = f"images/{image_id}.png"
            save_image(sample.pixels, out_dir / rel_path)
            samples.append(
                SampleRecord(
                    image_id=image_id,
                    scene_id=spec.scene_id,
                    path=rel_path,
                    width=image_size,
                    height=image_size,
                    human_boxes=sample.human_boxes,
                    params=params if with_params else None,
                )
            )
            tq = true_quality(params, spec.optimal_params, ranges)
            annotations.extend(
                simulate_annotations(
                    tq, image_id, n_annotators, noise_sd, seed=int(rng.integers(0, 2**62))
                )
            )
    manifest = DatasetManifest(samples=samples, annotations=annotations)
    if train_fraction is not None:
        manifest = split_scenes(manifest, train_fraction, seed=seed)
    return manifest
