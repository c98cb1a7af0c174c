"""Human-readable configuration files.

One YAML document configures the whole stack; every section is
optional and falls back to the built-in defaults. All lengths are mm,
all pixel quantities px, all angles deg:

    camera:
      fx_px: 830.0
      fy_px: 830.0
      width_px: 640
      height_px: 480
      center_px: [320.0, 240.0]
    brick:
      knob_pitch_mm: 8.0
      knob_radius_mm: 2.4
      rows: 2
      cols: 4
    fit:
      alpha: 35000.0
      beta: 1.0
      support_k: 3
    noise:
      mask_boundary_sigma_px: 0.15
      pointing_sigma_px: 0.8
      mask_dropout: 0.0
      reflection_sigma_px: 1.5
      boundary_harmonics: 3
    tolerance:
      capture_radius_mm: 0.8
      capture_yaw_deg: 2.0
    servo:
      threshold_mm: 0.1
      threshold_deg: 0.2
      max_iterations: 10
      gain: 1.0
      working_z_mm: 30.0
      defect_tilt_bound_deg: 0.5
    world:
      workspace_x_mm: [-200.0, 200.0]
      workspace_y_mm: [-200.0, 200.0]
      workspace_z_mm: [0.5, 300.0]
      aperture_fraction: 0.45
      brick_height_mm: 9.6
    seed: 1234

Teleop scenario files reuse the same sections plus a `teleop` section:

    teleop:
      brick_distance_mm: 100.0
      max_jog_mm: 5.0
      max_jog_deg: 10.0
      calib_error_mm: 1.0
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import yaml

from .geometry import BrickSpec, CameraModel
from .knobs import FitWeights
from .servo import ServoConfig
from .simworld import NoiseModel, ToleranceModel, WorldConfig


@dataclass(frozen=True)
class FitOptions:
    """FitWeights plus the solver knobs that ride along with them."""

    weights: FitWeights = FitWeights()
    support_k: int = 3

    def __post_init__(self):
        if self.support_k < 1:
            raise ValueError(f"support_k must be >= 1, got {self.support_k}")


@dataclass(frozen=True)
class TeleopOptions:
    """Operator-session knobs: brick spawn distance, jog step bounds,
    and the hidden calibration error injected per trial."""

    brick_distance_mm: float = 100.0
    max_jog_mm: float = 5.0
    max_jog_deg: float = 10.0
    calib_error_mm: float = 1.0

    def __post_init__(self):
        if self.brick_distance_mm <= 0 or self.max_jog_mm <= 0 or self.max_jog_deg <= 0:
            raise ValueError("teleop options must be positive")
        if self.calib_error_mm < 0:
            raise ValueError("calib_error_mm must be non-negative")


@dataclass(frozen=True)
class AppConfig:
    camera: CameraModel
    brick: BrickSpec
    fit: FitOptions
    noise: NoiseModel
    tolerance: ToleranceModel
    servo: ServoConfig
    world: WorldConfig
    teleop: TeleopOptions
    seed: int


def default_config() -> AppConfig:
    return AppConfig(
        camera=CameraModel(),
        brick=BrickSpec(),
        fit=FitOptions(),
        noise=NoiseModel(),
        tolerance=ToleranceModel(),
        servo=ServoConfig(),
        world=WorldConfig(),
        teleop=TeleopOptions(),
        seed=1234,
    )


def _build(cls, doc: dict, section: str, **extra):
    """Instantiate a config dataclass from a mapping, rejecting unknown
    keys so typos fail loudly instead of silently using defaults."""
    if not isinstance(doc, dict):
        raise ValueError(f"section '{section}' must be a mapping, got {type(doc).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown keys in section '{section}': {sorted(unknown)}")
    kwargs = dict(doc)
    for key, value in kwargs.items():
        if isinstance(value, list):
            kwargs[key] = tuple(value)
    kwargs.update(extra)
    return cls(**kwargs)


_SECTIONS = {"camera", "brick", "fit", "noise", "tolerance", "servo", "world", "teleop", "seed"}


def parse_config(doc: Optional[dict]) -> AppConfig:
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ValueError(f"config root must be a mapping, got {type(doc).__name__}")
    unknown = set(doc) - _SECTIONS
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    fit_doc = dict(doc.get("fit", {}))
    support_k = fit_doc.pop("support_k", 3)
    weights = _build(FitWeights, fit_doc, "fit")
    seed = doc.get("seed", 1234)
    if not isinstance(seed, int):
        raise ValueError(f"seed must be an integer, got {seed!r}")
    return AppConfig(
        camera=_build(CameraModel, doc.get("camera", {}), "camera"),
        brick=_build(BrickSpec, doc.get("brick", {}), "brick"),
        fit=FitOptions(weights=weights, support_k=int(support_k)),
        noise=_build(NoiseModel, doc.get("noise", {}), "noise"),
        tolerance=_build(ToleranceModel, doc.get("tolerance", {}), "tolerance"),
        servo=_build(ServoConfig, doc.get("servo", {}), "servo"),
        world=_build(WorldConfig, doc.get("world", {}), "world"),
        teleop=_build(TeleopOptions, doc.get("teleop", {}), "teleop"),
        seed=seed,
    )


def load_config(path=None) -> AppConfig:
    """Load a YAML config file, or the defaults when path is None."""
    if path is None:
        return default_config()
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValueError(f"cannot parse config {path}: {exc}") from None
    return parse_config(doc)


def load_noise(path) -> NoiseModel:
    """Load a noise override file: either a bare noise mapping or a full
    config document with a `noise` section."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ValueError(f"cannot parse noise file {path}: {exc}") from None
    if isinstance(doc, dict) and "noise" in doc:
        doc = doc["noise"]
    return _build(NoiseModel, doc, "noise")
