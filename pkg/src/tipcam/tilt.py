"""Surface tilt from the ring-light reflection.

With the light source concentric to the camera, a flat surface parallel
to the image plane reflects the ring back to the principal point. A
surface tilted by theta displaces the specular point by f * tan(theta)
pixels per axis, so the displacement inverts to

    theta_x = atan(d_x / f_x),   theta_y = atan(d_y / f_y).

The measurement is exquisitely sensitive near zero tilt (about 0.07 deg
per pixel at f = 830) and bounded by where the reflection walks off the
image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import BrickSpec, CameraModel, TiltAngles


@dataclass(frozen=True)
class ReflectionMeasurement:
    """Pixel displacement of the detected reflection from its
    calibrated zero-tilt position."""

    dx_px: float
    dy_px: float

    def __post_init__(self):
        if not (math.isfinite(self.dx_px) and math.isfinite(self.dy_px)):
            raise ValueError(f"displacement must be finite, got ({self.dx_px}, {self.dy_px})")

    @classmethod
    def from_pixels(cls, reflection_px, expected_px) -> "ReflectionMeasurement":
        return cls(
            float(reflection_px[0]) - float(expected_px[0]),
            float(reflection_px[1]) - float(expected_px[1]),
        )


def tilt_from_reflection(d: ReflectionMeasurement, cam: CameraModel) -> TiltAngles:
    """Invert the reflection displacement to roll and pitch, in degrees."""
    return TiltAngles(
        theta_x_deg=math.degrees(math.atan(d.dx_px / cam.fx_px)),
        theta_y_deg=math.degrees(math.atan(d.dy_px / cam.fy_px)),
    )


def max_observable_tilt(cam: CameraModel) -> tuple[float, float]:
    """Largest tilt per axis whose reflection still lands inside the
    image: atan(margin / f) with the margin from principal point to the
    nearer image border."""
    margin_x = min(cam.cx, cam.width_px - cam.cx)
    margin_y = min(cam.cy, cam.height_px - cam.cy)
    return (
        math.degrees(math.atan(margin_x / cam.fx_px)),
        math.degrees(math.atan(margin_y / cam.fy_px)),
    )


def reflection_target_site(spec: BrickSpec) -> tuple[float, float]:
    """Flat spot on a brick's top face where the reflection is measured,
    as a (x, y) offset in mm from the corner knob (x along columns,
    y along rows).

    Single-knob-wide bricks use the midpoint of two adjacent knobs along
    the long axis; wider bricks use the centroid of a 2x2 knob cell.
    A 1x1 brick has no adjacent pair and is unsupported.
    """
    half = spec.knob_pitch_mm / 2.0
    if min(spec.rows, spec.cols) >= 2:
        return (half, half)
    if spec.cols >= 2:
        return (half, 0.0)
    if spec.rows >= 2:
        return (0.0, half)
    raise ValueError("1x1 brick has no flat reflection site between knobs")
