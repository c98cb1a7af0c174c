"""Planar geometry, pinhole projection, and the package-wide frame conventions.

Frame conventions (every other module imports these; none restates them):

* Image frame: origin at the top-left corner, x to the right, y down,
  units of pixels. The pixel in raster row r, column c has its center
  at (x, y) = (c, r).
* Board frame: millimeters in the board plane. At zero tool yaw the
  board axes are aligned with the image axes: board +x appears as
  image +x, board +y as image +y.
* Yaw: counterclockwise positive as seen looking at the image. Since
  image y points down, rot2d and vec_yaw_deg carry the resulting sign
  flips internally so callers never hand-roll them.
* A board displacement d seen by a tool at yaw t appears along
  rot2d(-t) @ d in the image plane; an image-plane displacement maps
  back to board axes via rot2d(t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Vec2 = tuple[float, float]


def normalize_angle_deg(angle_deg: float) -> float:
    """Wrap an angle to the half-open interval (-180, 180]."""
    if not math.isfinite(angle_deg):
        raise ValueError(f"angle must be finite, got {angle_deg}")
    wrapped = angle_deg % 360.0
    if wrapped > 180.0:
        wrapped -= 360.0
    return wrapped


def rot2d(yaw_deg: float) -> np.ndarray:
    """2x2 matrix rotating image-frame (y down) vectors by yaw_deg
    counterclockwise as seen on screen."""
    c = math.cos(math.radians(yaw_deg))
    s = math.sin(math.radians(yaw_deg))
    # With y down, visually-counterclockwise is mathematically clockwise.
    return np.array([[c, s], [-s, c]])


def vec_yaw_deg(vx: float, vy: float) -> float:
    """Angle of an image-frame vector, counterclockwise from +x on screen."""
    if vx == 0.0 and vy == 0.0:
        raise ValueError("zero vector has no direction")
    return math.degrees(math.atan2(-vy, vx))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics of the tool-tip camera.

    center_px is the projection of the tool center; all measured pixel
    displacements are taken relative to it.
    """

    fx_px: float = 830.0
    fy_px: float = 830.0
    width_px: int = 640
    height_px: int = 480
    center_px: Vec2 = (320.0, 240.0)

    def __post_init__(self):
        if self.fx_px <= 0 or self.fy_px <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx_px}, {self.fy_px})")
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError(f"image size must be positive, got {self.width_px}x{self.height_px}")
        cx, cy = self.center_px
        if not (0.0 <= cx <= self.width_px and 0.0 <= cy <= self.height_px):
            raise ValueError(f"center_px {self.center_px} outside image bounds")

    @property
    def cx(self) -> float:
        return self.center_px[0]

    @property
    def cy(self) -> float:
        return self.center_px[1]


@dataclass(frozen=True)
class BrickSpec:
    """Knob layout of one brick type. Values are configuration, not
    constants: pitch and radius ride in from the config file."""

    knob_pitch_mm: float = 8.0
    knob_radius_mm: float = 2.4
    rows: int = 2
    cols: int = 4

    def __post_init__(self):
        # radius 0 is tolerated as an explicit degenerate case
        if self.knob_radius_mm < 0:
            raise ValueError(f"knob radius must be >= 0, got {self.knob_radius_mm}")
        if self.knob_pitch_mm <= 2 * self.knob_radius_mm:
            raise ValueError(
                f"knob pitch {self.knob_pitch_mm} must exceed knob diameter "
                f"{2 * self.knob_radius_mm}"
            )
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"brick footprint must be at least 1x1, got {self.rows}x{self.cols}")


@dataclass(frozen=True)
class PlanarOffset:
    """In-plane pose delta (x, y, yaw). Yaw is stored normalized to
    (-180, 180]."""

    dx_mm: float
    dy_mm: float
    dyaw_deg: float

    def __post_init__(self):
        if not (math.isfinite(self.dx_mm) and math.isfinite(self.dy_mm)):
            raise ValueError(f"offset must be finite, got ({self.dx_mm}, {self.dy_mm})")
        object.__setattr__(self, "dyaw_deg", normalize_angle_deg(self.dyaw_deg))

    @property
    def translation_mm(self) -> float:
        return math.hypot(self.dx_mm, self.dy_mm)

    def scaled(self, gain: float) -> "PlanarOffset":
        return PlanarOffset(gain * self.dx_mm, gain * self.dy_mm, gain * self.dyaw_deg)


@dataclass(frozen=True)
class TiltAngles:
    """Roll and pitch of a surface relative to the camera axis."""

    theta_x_deg: float
    theta_y_deg: float

    def __post_init__(self):
        for name, value in (("theta_x_deg", self.theta_x_deg), ("theta_y_deg", self.theta_y_deg)):
            if not math.isfinite(value) or abs(value) >= 90.0:
                raise ValueError(f"{name} must lie in (-90, 90), got {value}")

    @property
    def magnitude_deg(self) -> float:
        return max(abs(self.theta_x_deg), abs(self.theta_y_deg))


def project_point(cam: CameraModel, p_mm) -> Vec2:
    """Project a camera-frame 3D point (mm) to a pixel coordinate.

    The result may fall outside the image; callers clip.
    """
    x, y, z = float(p_mm[0]), float(p_mm[1]), float(p_mm[2])
    if z <= 0:
        raise ValueError(f"point depth must be positive, got z={z}")
    return (cam.cx + cam.fx_px * x / z, cam.cy + cam.fy_px * y / z)


def expected_knob_radius_px(cam: CameraModel, spec: BrickSpec, z_mm: float) -> float:
    """Apparent knob radius at camera-to-brick distance z_mm."""
    if z_mm <= 0:
        raise ValueError(f"z must be positive, got {z_mm}")
    return cam.fx_px * spec.knob_radius_mm / z_mm


def px_to_mm(cam: CameraModel, z_mm: float, d_px) -> Vec2:
    """Convert a pixel displacement at depth z_mm to millimeters."""
    if z_mm <= 0:
        raise ValueError(f"z must be positive, got {z_mm}")
    return (float(d_px[0]) * z_mm / cam.fx_px, float(d_px[1]) * z_mm / cam.fy_px)


def mm_to_px(cam: CameraModel, z_mm: float, d_mm) -> Vec2:
    """Convert a board-plane displacement in mm to pixels at depth z_mm."""
    if z_mm <= 0:
        raise ValueError(f"z must be positive, got {z_mm}")
    return (float(d_mm[0]) * cam.fx_px / z_mm, float(d_mm[1]) * cam.fy_px / z_mm)
