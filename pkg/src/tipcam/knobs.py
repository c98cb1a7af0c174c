"""Occluded-knob circle reconstruction and planar offset measurement.

A partially occluded knob mask still shows its true silhouette on the
side facing the tool center. Two tangent lines taken there (one
horizontal, one vertical) pin the circle center to a single degree of
freedom: center = line corner + (side_x * r, side_y * r). The radius is
then chosen to minimize

    cost(r) = alpha * (1 - covered_fraction) + beta * |A_exp - pi r^2|

where covered_fraction counts mask pixel centers inside the circle and
A_exp is the expected knob area at the capture distance.

The minimization scans a fine radius lattice (exact coverage counts via
per-pixel membership intervals, so the scan is O(N log N) instead of
O(N * lattice)) and polishes the winning lattice point with a
golden-section search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CircleFitError, DegenerateMaskError, PairingError
from .geometry import (
    BrickSpec,
    CameraModel,
    PlanarOffset,
    expected_knob_radius_px,
    normalize_angle_deg,
    px_to_mm,
    vec_yaw_deg,
)
from .masks import KnobMask, Observation

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class FitWeights:
    """Weights of the two cost terms: alpha on the uncovered mask
    fraction, beta per px^2 of area discrepancy."""

    alpha: float = 3.5e4
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")


@dataclass(frozen=True)
class BoundingLines:
    """Tangent lines on the mask's side toward the tool center.

    side_x / side_y give the direction from each line toward the circle
    center: +1 means the center lies at larger x (resp. y) than the
    line, -1 at smaller. The line coordinates are pixel row/column
    positions; they are integers when taken directly from the extremal
    scan and fractional after sub-pixel refinement.
    """

    l_h_row: float
    l_v_col: float
    side_x: int
    side_y: int

    def __post_init__(self):
        if self.side_x not in (-1, 1) or self.side_y not in (-1, 1):
            raise ValueError(f"side flags must be +/-1, got ({self.side_x}, {self.side_y})")

    def center_for_radius(self, r: float) -> tuple[float, float]:
        return (self.l_v_col + self.side_x * r, self.l_h_row + self.side_y * r)


@dataclass(frozen=True)
class FittedKnob:
    """One reconstructed knob circle and the cost at its optimum."""

    center_px: tuple[float, float]
    radius_px: float
    cost: float
    mask_label: int

    def __post_init__(self):
        if self.radius_px <= 0:
            raise ValueError(f"fitted radius must be positive, got {self.radius_px}")


_REFINE_LINES = 4


def _refine_tangent(counts: np.ndarray, extremal: int, inward: int, radius_px: float) -> float:
    """Sub-pixel gap between the extremal grid line and the true tangent.

    A grid line at depth d from a circle's tangent cuts a chord of
    half-length sqrt(r^2 - (r-d)^2), so the pixel count of each line
    near the rim implies a depth and thus an estimate of the gap.
    Averaging a few lines smooths single-pixel boundary noise that
    would otherwise snap the tangent between whole pixels.
    """
    fracs = []
    for j in range(_REFINE_LINES):
        idx = extremal + inward * j
        if not 0 <= idx < counts.size:
            break
        half_chord = 0.5 * (float(counts[idx]) - 1.0)
        if half_chord <= 0 or half_chord >= radius_px:
            continue
        depth = radius_px - math.sqrt(radius_px * radius_px - half_chord * half_chord)
        fracs.append(min(1.0, max(0.0, depth - j)))
    if not fracs:
        return 0.0
    return float(np.mean(fracs))


def find_bounding_lines(
    mask: KnobMask,
    tool_center_px,
    support_k: int = 3,
    refine_radius_px: Optional[float] = None,
) -> BoundingLines:
    """Locate the tangent row and column on the mask's tool-center side.

    A row or column only counts once it holds at least support_k mask
    pixels; thinner extremes are stepped over so single-pixel boundary
    noise cannot shift the tangent by whole pixels. With
    refine_radius_px given (the expected knob radius), the integer
    extremal lines are refined to sub-pixel positions from the chord
    lengths near the rim; the refined line always stays within one
    pixel outward of the extremal one.
    """
    xs, ys = mask.pixels_xy()
    col_counts = np.bincount(xs - mask.x0_px, minlength=mask.width)
    row_counts = np.bincount(ys - mask.y0_px, minlength=mask.height)
    good_cols = np.flatnonzero(col_counts >= support_k)
    good_rows = np.flatnonzero(row_counts >= support_k)
    if good_cols.size == 0 or good_rows.size == 0:
        raise DegenerateMaskError(
            f"mask {mask.label} has no row or column with >= {support_k} pixels"
        )
    cx, cy = float(tool_center_px[0]), float(tool_center_px[1])
    mx, my = mask.centroid_xy()
    if mx <= cx:
        # mask sits left of the tool center: its right edge is trustworthy
        col = int(good_cols.max())
        side_x = -1
    else:
        col = int(good_cols.min())
        side_x = 1
    if my <= cy:
        row = int(good_rows.max())
        side_y = -1
    else:
        row = int(good_rows.min())
        side_y = 1
    l_v = float(col + mask.x0_px)
    l_h = float(row + mask.y0_px)
    if refine_radius_px is not None:
        if refine_radius_px <= 0:
            raise ValueError(f"refine radius must be positive, got {refine_radius_px}")
        l_v -= side_x * _refine_tangent(col_counts, col, side_x, refine_radius_px)
        l_h -= side_y * _refine_tangent(row_counts, row, side_y, refine_radius_px)
    return BoundingLines(l_h_row=l_h, l_v_col=l_v, side_x=side_x, side_y=side_y)


def _covered_count(xs, ys, cx: float, cy: float, r: float) -> int:
    """Pixel centers inside (or on) the circle. Every cost evaluation in
    this module funnels through this exact expression."""
    return int(np.count_nonzero((xs - cx) ** 2 + (ys - cy) ** 2 <= r * r))


def eval_cost(
    mask: KnobMask,
    center_px,
    radius_px: float,
    expected_area_px2: float,
    weights: FitWeights,
) -> float:
    """Score a candidate circle against a mask."""
    if radius_px <= 0:
        raise ValueError(f"radius must be positive, got {radius_px}")
    if expected_area_px2 <= 0:
        raise ValueError(f"expected area must be positive, got {expected_area_px2}")
    xs, ys = mask.pixels_xy()
    if xs.size == 0:
        raise ValueError("empty mask")
    covered = _covered_count(
        xs.astype(np.float64), ys.astype(np.float64), center_px[0], center_px[1], radius_px
    )
    uncovered_frac = 1.0 - covered / xs.size
    area_err = abs(expected_area_px2 - math.pi * radius_px * radius_px)
    return weights.alpha * uncovered_frac + weights.beta * area_err


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    """Golden-section minimization of f on [lo, hi]."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def fit_circle(
    mask: KnobMask,
    lines: BoundingLines,
    expected_area_px2: float,
    weights: FitWeights,
    lattice_step_px: float = 0.05,
    tol_px: float = 0.02,
) -> FittedKnob:
    """Find the radius minimizing the fit cost under the tangency
    constraints.

    The search bracket is [0.5, 1.5] times the radius implied by the
    expected area. Coverage counts over the whole radius lattice come
    from per-pixel membership intervals: pixel p lies inside the circle
    of radius r exactly when r^2 - 2 r (s . (p - c0)) + |p - c0|^2 <= 0,
    a condition linear in the interval [a - sqrt(a^2-b), a + sqrt(a^2-b)].
    A minimum pinned to either bracket edge means the data contradicts
    the expected area badly enough that no interior optimum exists.
    """
    if expected_area_px2 <= 0:
        raise ValueError(f"expected area must be positive, got {expected_area_px2}")
    r_exp = math.sqrt(expected_area_px2 / math.pi)
    lo, hi = 0.5 * r_exp, 1.5 * r_exp
    n = int(math.floor((hi - lo) / lattice_step_px)) + 1
    if n < 3:
        raise ValueError(f"expected radius {r_exp:.3f} px too small for a {lattice_step_px} px scan")
    radii = lo + lattice_step_px * np.arange(n)

    xs, ys = mask.pixels_xy()
    px = xs.astype(np.float64)
    py = ys.astype(np.float64)
    dx = px - lines.l_v_col
    dy = py - lines.l_h_row
    a = lines.side_x * dx + lines.side_y * dy
    b = dx * dx + dy * dy
    disc = a * a - b
    ok = disc >= 0
    root = np.sqrt(disc[ok])
    enter = np.sort(a[ok] - root)
    leave = np.sort(a[ok] + root)
    covered = np.searchsorted(enter, radii, side="right") - np.searchsorted(
        leave, radii, side="left"
    )
    cost_lattice = weights.alpha * (1.0 - covered / px.size) + weights.beta * np.abs(
        expected_area_px2 - math.pi * radii * radii
    )
    best = int(np.argmin(cost_lattice))
    if best == 0 or best == n - 1:
        r_edge = float(radii[best])
        knob = FittedKnob(
            center_px=lines.center_for_radius(r_edge),
            radius_px=r_edge,
            cost=eval_cost(mask, lines.center_for_radius(r_edge), r_edge, expected_area_px2, weights),
            mask_label=mask.label,
        )
        raise CircleFitError(
            f"mask {mask.label}: cost minimum sits at the bracket edge r={r_edge:.2f} px",
            best=knob,
        )

    def exact_cost(r: float) -> float:
        cx, cy = lines.center_for_radius(r)
        c = _covered_count(px, py, cx, cy, r)
        return weights.alpha * (1.0 - c / px.size) + weights.beta * abs(
            expected_area_px2 - math.pi * r * r
        )

    r_star = float(radii[best])
    polished = _golden_section(
        exact_cost,
        max(lo, r_star - lattice_step_px),
        min(hi, r_star + lattice_step_px),
        tol_px,
    )
    candidates = sorted({r_star, polished})
    r_best = min(candidates, key=exact_cost)
    return FittedKnob(
        center_px=lines.center_for_radius(r_best),
        radius_px=r_best,
        cost=exact_cost(r_best),
        mask_label=mask.label,
    )


def fit_observation_masks(
    obs: Observation,
    cam: CameraModel,
    spec: BrickSpec,
    weights: FitWeights,
    support_k: int = 3,
) -> list[FittedKnob]:
    """Fit every mask in an observation, silently dropping masks that
    are degenerate or whose fit has no interior optimum (those are
    typically knobs at a different height than the nominal plane)."""
    r_exp = expected_knob_radius_px(cam, spec, obs.z_mm)
    area = math.pi * r_exp * r_exp
    fitted = []
    for mask in obs.masks:
        try:
            lines = find_bounding_lines(mask, cam.center_px, support_k, refine_radius_px=r_exp)
            fitted.append(fit_circle(mask, lines, area, weights))
        except (DegenerateMaskError, CircleFitError):
            continue
    return fitted


def select_target_pair(
    knobs: list[FittedKnob],
    tool_center_px,
    cam: CameraModel,
    spec: BrickSpec,
    z_mm: float,
    pitch_tolerance: float = 0.25,
    max_off_vertical_deg: float = 30.0,
) -> tuple[FittedKnob, FittedKnob]:
    """Pick the vertical knob pair whose midpoint is nearest the tool
    center.

    A pair qualifies when its center spacing is within pitch_tolerance
    of the projected knob pitch and its axis is within
    max_off_vertical_deg of the image vertical. Ties go to the lower
    summed fit cost, then to lexicographic center coordinates. The
    returned pair is ordered top knob first.
    """
    if len(knobs) < 2:
        raise PairingError(f"need at least 2 fitted knobs, have {len(knobs)}")
    if z_mm <= 0:
        raise ValueError(f"z must be positive, got {z_mm}")
    pitch_px = 0.5 * (cam.fx_px + cam.fy_px) * spec.knob_pitch_mm / z_mm
    cx, cy = float(tool_center_px[0]), float(tool_center_px[1])
    candidates = []
    for i in range(len(knobs)):
        for j in range(i + 1, len(knobs)):
            ax, ay = knobs[i].center_px
            bx, by = knobs[j].center_px
            dist = math.hypot(bx - ax, by - ay)
            if abs(dist - pitch_px) > pitch_tolerance * pitch_px:
                continue
            off_vertical = math.degrees(math.atan2(abs(bx - ax), abs(by - ay)))
            if off_vertical > max_off_vertical_deg:
                continue
            mid = (0.5 * (ax + bx), 0.5 * (ay + by))
            gap = math.hypot(mid[0] - cx, mid[1] - cy)
            top, bottom = sorted((knobs[i], knobs[j]), key=lambda k: (k.center_px[1], k.center_px[0]))
            key = (gap, knobs[i].cost + knobs[j].cost, (top.center_px, bottom.center_px))
            candidates.append((key, top, bottom))
    if not candidates:
        raise PairingError(
            f"no vertical knob pair among {len(knobs)} knobs "
            f"(pitch {pitch_px:.1f} px +/- {pitch_tolerance:.0%})"
        )
    candidates.sort(key=lambda c: c[0])
    _, top, bottom = candidates[0]
    return top, bottom


def compute_offset(actual_centers, expected_centers, cam: CameraModel, z_mm: float) -> PlanarOffset:
    """Planar offset of the observed pair from the calibrated pair.

    Positive dx/dy mean the brick sits at larger image x/y than
    expected, i.e. the offset points from the tool toward the brick in
    camera-aligned axes. dyaw is the screen-counterclockwise rotation
    carrying the expected pair axis onto the actual one.
    """
    (ax1, ay1), (ax2, ay2) = (tuple(map(float, c)) for c in actual_centers)
    (ex1, ey1), (ex2, ey2) = (tuple(map(float, c)) for c in expected_centers)
    if (ax1, ay1) == (ax2, ay2):
        raise ValueError("actual pair centers coincide")
    if (ex1, ey1) == (ex2, ey2):
        raise ValueError("expected pair centers define no baseline")
    # order both pairs top-first so the two axis vectors are comparable
    if (ay1, ax1) > (ay2, ax2):
        (ax1, ay1), (ax2, ay2) = (ax2, ay2), (ax1, ay1)
    if (ey1, ex1) > (ey2, ex2):
        (ex1, ey1), (ex2, ey2) = (ex2, ey2), (ex1, ey1)
    mid_dx = 0.5 * (ax1 + ax2) - 0.5 * (ex1 + ex2)
    mid_dy = 0.5 * (ay1 + ay2) - 0.5 * (ey1 + ey2)
    dx_mm, dy_mm = px_to_mm(cam, z_mm, (mid_dx, mid_dy))
    dyaw = normalize_angle_deg(
        vec_yaw_deg(ax2 - ax1, ay2 - ay1) - vec_yaw_deg(ex2 - ex1, ey2 - ey1)
    )
    return PlanarOffset(dx_mm, dy_mm, dyaw)


def measure_planar_offset(
    obs: Observation,
    cam: CameraModel,
    spec: BrickSpec,
    weights: FitWeights,
    expected_centers,
    support_k: int = 3,
) -> tuple[PlanarOffset, tuple[FittedKnob, FittedKnob]]:
    """Full per-frame measurement: fit masks, select the target pair,
    compare against the calibrated expected centers."""
    fitted = fit_observation_masks(obs, cam, spec, weights, support_k)
    pair = select_target_pair(fitted, cam.center_px, cam, spec, obs.z_mm)
    offset = compute_offset(
        (pair[0].center_px, pair[1].center_px), expected_centers, cam, obs.z_mm
    )
    return offset, pair
