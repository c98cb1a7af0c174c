"""Synthetic desk-scale world: ground truth, kinematics, and rendering.

The world owns the only mutable state in the package: brick layout, the
commanded tool pose, the held brick, and the injected calibration error
delta. Every commanded move lands at commanded + delta; delta is the
unknown the perception stack has to beat.

Rendering is a pure function of a world snapshot: each visible knob
projects to a disc, clipped to the tool's circular aperture window,
with optional low-frequency boundary jitter; the ring-light reflection
appears when the point directly beneath the camera lies on a flat spot
of a brick's top face, displaced by f * tan(tilt) per axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import MotionError, RenderError, WorldStateError
from .geometry import BrickSpec, CameraModel, PlanarOffset, TiltAngles, normalize_angle_deg, rot2d, vec_yaw_deg
from .masks import KnobMask, Observation

ZERO_OFFSET = PlanarOffset(0.0, 0.0, 0.0)
ZERO_TILT = TiltAngles(0.0, 0.0)


@dataclass(frozen=True)
class ToolPose:
    """Commanded or true tool pose. z is the camera height above the
    board top surface; yaw follows the package screen convention."""

    x_mm: float
    y_mm: float
    z_mm: float
    yaw_deg: float = 0.0
    roll_deg: float = 0.0
    pitch_deg: float = 0.0

    def moved(self, dx=0.0, dy=0.0, dz=0.0, dyaw=0.0) -> "ToolPose":
        return replace(
            self,
            x_mm=self.x_mm + dx,
            y_mm=self.y_mm + dy,
            z_mm=self.z_mm + dz,
            yaw_deg=normalize_angle_deg(self.yaw_deg + dyaw),
        )

    def at(self, x=None, y=None, z=None, yaw=None) -> "ToolPose":
        return replace(
            self,
            x_mm=self.x_mm if x is None else x,
            y_mm=self.y_mm if y is None else y,
            z_mm=self.z_mm if z is None else z,
            yaw_deg=self.yaw_deg if yaw is None else normalize_angle_deg(yaw),
        )


@dataclass(frozen=True)
class NoiseModel:
    """Sensor imperfections of the synthetic provider.

    pointing_sigma_px models tool-tip vibration: one draw per capture
    shifting the whole projected image (every mask and the reflection)
    by a common sub-pixel vector. Boundary jitter models per-knob
    segmentation noise as a sum of low-order Fourier harmonics around
    the disc rim whose total variance is mask_boundary_sigma_px
    squared. reflection_sigma_px is detector noise on the reflection
    point alone.
    """

    mask_boundary_sigma_px: float = 0.15
    pointing_sigma_px: float = 0.8
    mask_dropout: float = 0.0
    reflection_sigma_px: float = 1.5
    boundary_harmonics: int = 3

    def __post_init__(self):
        if (
            self.mask_boundary_sigma_px < 0
            or self.pointing_sigma_px < 0
            or self.reflection_sigma_px < 0
        ):
            raise ValueError("noise sigmas must be non-negative")
        if not 0.0 <= self.mask_dropout <= 1.0:
            raise ValueError(f"mask_dropout must be a probability, got {self.mask_dropout}")
        if self.boundary_harmonics < 1:
            raise ValueError("need at least one boundary harmonic")


NOISE_FREE = NoiseModel(
    mask_boundary_sigma_px=0.0,
    pointing_sigma_px=0.0,
    mask_dropout=0.0,
    reflection_sigma_px=0.0,
)


@dataclass(frozen=True)
class ToleranceModel:
    """Mechanical capture envelope of the chamfered tool: residual
    translation and yaw within which a pick or place self-centers."""

    capture_radius_mm: float = 0.8
    capture_yaw_deg: float = 2.0

    def __post_init__(self):
        if self.capture_radius_mm < 0 or self.capture_yaw_deg < 0:
            raise ValueError("capture tolerances must be non-negative")


@dataclass(frozen=True)
class WorldConfig:
    """Workspace limits and scale constants of the synthetic desk."""

    workspace_x_mm: tuple[float, float] = (-200.0, 200.0)
    workspace_y_mm: tuple[float, float] = (-200.0, 200.0)
    workspace_z_mm: tuple[float, float] = (0.5, 300.0)
    aperture_fraction: float = 0.45
    brick_height_mm: float = 9.6

    def __post_init__(self):
        for lo, hi in (self.workspace_x_mm, self.workspace_y_mm, self.workspace_z_mm):
            if not lo < hi:
                raise ValueError(f"empty workspace interval ({lo}, {hi})")
        if not 0 < self.aperture_fraction <= 1:
            raise ValueError(f"aperture_fraction must be in (0, 1], got {self.aperture_fraction}")
        if self.brick_height_mm <= 0:
            raise ValueError("brick height must be positive")

    def aperture_radius_px(self, cam: CameraModel) -> float:
        return self.aperture_fraction * min(cam.width_px, cam.height_px)


@dataclass
class Brick:
    """One brick instance. (x_mm, y_mm) locate its corner knob
    (row 0, col 0); yaw rotates the knob grid about that corner."""

    brick_id: int
    spec: BrickSpec
    x_mm: float
    y_mm: float
    yaw_deg: float = 0.0
    level: int = 0
    tilt: TiltAngles = ZERO_TILT

    def knob_positions(self) -> list[tuple[int, int, float, float]]:
        """(row, col, board x, board y) of every knob."""
        rot = rot2d(self.yaw_deg)
        out = []
        for j in range(self.spec.rows):
            for i in range(self.spec.cols):
                local = np.array([i * self.spec.knob_pitch_mm, j * self.spec.knob_pitch_mm])
                world = rot @ local
                out.append((j, i, float(self.x_mm + world[0]), float(self.y_mm + world[1])))
        return out

    def contains_point(self, x_mm: float, y_mm: float) -> bool:
        """True when the board point lies inside the brick footprint
        (knob grid plus half a pitch of skirt on every side)."""
        local = rot2d(-self.yaw_deg) @ np.array([x_mm - self.x_mm, y_mm - self.y_mm])
        half = self.spec.knob_pitch_mm / 2.0
        return (
            -half <= local[0] <= (self.spec.cols - 1) * self.spec.knob_pitch_mm + half
            and -half <= local[1] <= (self.spec.rows - 1) * self.spec.knob_pitch_mm + half
        )

    def knob_plane_mm(self, brick_height_mm: float) -> float:
        return (self.level + 1) * brick_height_mm


@dataclass(frozen=True)
class PairSite:
    """One adjacent knob pair: the mechanical unit picks and places
    latch onto, and the visual servo target."""

    brick_id: int
    knob_a: tuple[int, int]
    knob_b: tuple[int, int]
    mid_x_mm: float
    mid_y_mm: float
    axis_yaw_deg: float
    level: int

    @property
    def key(self) -> tuple:
        return (self.brick_id, self.knob_a, self.knob_b)

    def aligned_tool_yaw(self) -> float:
        """Tool yaw that shows this pair vertically in the image."""
        return normalize_angle_deg(self.axis_yaw_deg + 90.0)


@dataclass(frozen=True)
class AttemptResult:
    """Outcome of one mechanical pick or place attempt, with the true
    residuals that decided it."""

    outcome: str  # success | collision | miss
    residual_mm: float
    residual_yaw_deg: float
    brick_id: Optional[int] = None


class WorldState:
    """Mutable ground truth. All mutation goes through command_move,
    attempt_pick, attempt_place, and inject_calibration_error."""

    def __init__(
        self,
        cam: CameraModel,
        config: WorldConfig = WorldConfig(),
        bricks: Sequence[Brick] = (),
        tool_pose: ToolPose = ToolPose(0.0, 0.0, 30.0),
        calib_error: PlanarOffset = ZERO_OFFSET,
        seed=0,
    ):
        self.cam = cam
        self.config = config
        self.bricks: list[Brick] = list(bricks)
        ids = [b.brick_id for b in self.bricks]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate brick ids: {ids}")
        self.calib_error = calib_error
        self.held_brick: Optional[Brick] = None
        self._held_grip: Optional[dict] = None
        self.seed = seed
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        self._check_workspace(tool_pose)
        self.commanded_pose = tool_pose

    # -- kinematics ---------------------------------------------------

    def _check_workspace(self, pose: ToolPose) -> None:
        cfg = self.config
        if not (
            cfg.workspace_x_mm[0] <= pose.x_mm <= cfg.workspace_x_mm[1]
            and cfg.workspace_y_mm[0] <= pose.y_mm <= cfg.workspace_y_mm[1]
            and cfg.workspace_z_mm[0] <= pose.z_mm <= cfg.workspace_z_mm[1]
        ):
            raise MotionError(f"target pose {pose} outside workspace")

    @property
    def true_pose(self) -> ToolPose:
        d = self.calib_error
        return replace(
            self.commanded_pose,
            x_mm=self.commanded_pose.x_mm + d.dx_mm,
            y_mm=self.commanded_pose.y_mm + d.dy_mm,
            yaw_deg=normalize_angle_deg(self.commanded_pose.yaw_deg + d.dyaw_deg),
        )

    def command_move(self, target: ToolPose) -> None:
        """Ideal motion: the commanded pose is reached exactly, then the
        hidden calibration error applies on top."""
        self._check_workspace(target)
        self.commanded_pose = target

    def inject_calibration_error(self, magnitude_mm: float, yaw_deg: float = 0.0, rng=None) -> None:
        """Set delta to the given magnitude at a uniformly random planar
        direction (yaw component only if explicitly asked for)."""
        if magnitude_mm < 0:
            raise ValueError(f"magnitude must be non-negative, got {magnitude_mm}")
        gen = self.rng if rng is None else rng
        angle = gen.uniform(0.0, 2.0 * math.pi)
        self.calib_error = PlanarOffset(
            magnitude_mm * math.cos(angle), magnitude_mm * math.sin(angle), yaw_deg
        )

    # -- pair bookkeeping ---------------------------------------------

    def _occluded(self, x_mm: float, y_mm: float, level: int) -> bool:
        return any(
            b.level > level and b.contains_point(x_mm, y_mm) for b in self.bricks
        )

    def pair_sites(self, include_occluded: bool = False) -> list[PairSite]:
        """All adjacent knob pairs on the board, top knob pairs only
        unless include_occluded."""
        sites = []
        for b in self.bricks:
            knobs = {(j, i): (x, y) for j, i, x, y in b.knob_positions()}
            for (j, i), (x1, y1) in knobs.items():
                for dj, di in ((0, 1), (1, 0)):
                    other = (j + dj, i + di)
                    if other not in knobs:
                        continue
                    x2, y2 = knobs[other]
                    mx, my = 0.5 * (x1 + x2), 0.5 * (y1 + y2)
                    if not include_occluded and self._occluded(mx, my, b.level):
                        continue
                    sites.append(
                        PairSite(
                            brick_id=b.brick_id,
                            knob_a=(j, i),
                            knob_b=other,
                            mid_x_mm=mx,
                            mid_y_mm=my,
                            axis_yaw_deg=vec_yaw_deg(x2 - x1, y2 - y1),
                            level=b.level,
                        )
                    )
        return sites

    def nearest_pair(self, x_mm: float, y_mm: float) -> Optional[PairSite]:
        sites = self.pair_sites()
        if not sites:
            return None
        return min(sites, key=lambda s: (math.hypot(s.mid_x_mm - x_mm, s.mid_y_mm - y_mm), s.key))

    def brick_by_id(self, brick_id: int) -> Brick:
        for b in self.bricks:
            if b.brick_id == brick_id:
                return b
        raise WorldStateError(f"no brick with id {brick_id}")

    def _yaw_residual_deg(self, pair: PairSite) -> float:
        """Acute angle between the pair axis and the true tool grip axis
        (the tool's image-vertical), modulo 180."""
        tool_axis_yaw = self.true_pose.yaw_deg - 90.0
        d = normalize_angle_deg(pair.axis_yaw_deg - tool_axis_yaw)
        d = (d + 90.0) % 180.0 - 90.0
        return abs(d)

    # -- mechanics ----------------------------------------------------

    def attempt_pick(self, tol: ToleranceModel) -> AttemptResult:
        """Engage the tool at its current true position. Within the
        capture envelope the chamfer self-centers and the nearest pair's
        brick is lifted; within one knob pitch but outside capture the
        tool strikes knobs (collision); farther away it closes on air."""
        if self.held_brick is not None:
            raise WorldStateError("cannot pick: a brick is already held")
        tp = self.true_pose
        pair = self.nearest_pair(tp.x_mm, tp.y_mm)
        pitch = None if pair is None else self.brick_by_id(pair.brick_id).spec.knob_pitch_mm
        if pair is None:
            return AttemptResult("miss", math.inf, math.inf)
        residual = math.hypot(pair.mid_x_mm - tp.x_mm, pair.mid_y_mm - tp.y_mm)
        yaw_residual = self._yaw_residual_deg(pair)
        if residual <= tol.capture_radius_mm and yaw_residual <= tol.capture_yaw_deg:
            brick = self.brick_by_id(pair.brick_id)
            self.bricks.remove(brick)
            rot_inv = rot2d(-brick.yaw_deg)
            mid_local = rot_inv @ np.array([pair.mid_x_mm - brick.x_mm, pair.mid_y_mm - brick.y_mm])
            self.held_brick = brick
            self._held_grip = {
                "mid_local": (float(mid_local[0]), float(mid_local[1])),
                "axis_local_deg": normalize_angle_deg(pair.axis_yaw_deg - brick.yaw_deg),
                "yaw_rel_deg": normalize_angle_deg(brick.yaw_deg - tp.yaw_deg),
            }
            return AttemptResult("success", residual, yaw_residual, brick.brick_id)
        if residual <= pitch:
            return AttemptResult("collision", residual, yaw_residual, pair.brick_id)
        return AttemptResult("miss", residual, yaw_residual, pair.brick_id)

    def attempt_place(self, tol: ToleranceModel, defect_tilt: Optional[TiltAngles] = None) -> AttemptResult:
        """Mirror of attempt_pick: seat the held brick onto the nearest
        pair. A successful seat is exact (tilt zero) unless a defect
        tilt is injected; a failed attempt keeps the brick in the tool."""
        if self.held_brick is None:
            raise WorldStateError("cannot place: no brick held")
        tp = self.true_pose
        pair = self.nearest_pair(tp.x_mm, tp.y_mm)
        if pair is None:
            return AttemptResult("miss", math.inf, math.inf)
        base = self.brick_by_id(pair.brick_id)
        seat_level = base.level + 1
        grip = self._held_grip or {
            "mid_local": (0.0, self.held_brick.spec.knob_pitch_mm / 2.0),
            "axis_local_deg": -90.0,
            "yaw_rel_deg": 0.0,
        }
        raw_yaw = normalize_angle_deg(tp.yaw_deg + grip["yaw_rel_deg"])
        base_yaw = normalize_angle_deg(pair.axis_yaw_deg - grip["axis_local_deg"])
        candidates = [normalize_angle_deg(base_yaw + k * 180.0) for k in (0, 1)]
        placed_yaw = min(candidates, key=lambda y: abs(normalize_angle_deg(y - raw_yaw)))
        mid_local = np.array(grip["mid_local"])
        origin = np.array([pair.mid_x_mm, pair.mid_y_mm]) - rot2d(placed_yaw) @ mid_local
        seated = replace(
            self.held_brick,
            x_mm=float(origin[0]),
            y_mm=float(origin[1]),
            yaw_deg=placed_yaw,
            level=seat_level,
        )
        # footprint occupancy at knob resolution: anything already in the
        # seat plane that overlaps the would-be footprint blocks the place
        for b in self.bricks:
            if b.level != seat_level:
                continue
            if any(b.contains_point(kx, ky) for _, _, kx, ky in seated.knob_positions()) or any(
                seated.contains_point(kx, ky) for _, _, kx, ky in b.knob_positions()
            ):
                raise WorldStateError(
                    f"placement over pair {pair.key} overlaps brick {b.brick_id}"
                )
        residual = math.hypot(pair.mid_x_mm - tp.x_mm, pair.mid_y_mm - tp.y_mm)
        yaw_residual = self._yaw_residual_deg(pair)
        if residual <= tol.capture_radius_mm and yaw_residual <= tol.capture_yaw_deg:
            brick = self.held_brick
            brick.x_mm, brick.y_mm = seated.x_mm, seated.y_mm
            brick.yaw_deg = seated.yaw_deg
            brick.level = seat_level
            brick.tilt = defect_tilt if defect_tilt is not None else ZERO_TILT
            self.bricks.append(brick)
            self.held_brick = None
            self._held_grip = None
            return AttemptResult("success", residual, yaw_residual, brick.brick_id)
        pitch = base.spec.knob_pitch_mm
        if residual <= pitch:
            return AttemptResult("collision", residual, yaw_residual, pair.brick_id)
        return AttemptResult("miss", residual, yaw_residual, pair.brick_id)

    @property
    def brick_count(self) -> int:
        return len(self.bricks) + (1 if self.held_brick is not None else 0)


# -- rendering --------------------------------------------------------


def _reflection_surface(world: WorldState, x_mm: float, y_mm: float) -> Optional[Brick]:
    """Topmost brick whose flat top face lies directly beneath the
    camera axis; None when the foot point is off-brick or on a knob."""
    best = None
    for b in world.bricks:
        if not b.contains_point(x_mm, y_mm):
            continue
        if best is None or b.level > best.level:
            best = b
    if best is None:
        return None
    for _, _, kx, ky in best.knob_positions():
        if math.hypot(kx - x_mm, ky - y_mm) < best.spec.knob_radius_mm:
            return None
    return best


def render_observation(
    world: WorldState,
    noise: NoiseModel = NOISE_FREE,
    rng=None,
    meta: Sequence[tuple[str, str]] = (),
) -> Observation:
    """Render the current true view to an Observation.

    Draws (dropout, boundary jitter, reflection noise) come from the
    world's generator unless an explicit one is passed, so a seeded
    world replays bit-exactly under the same command/capture sequence.
    """
    cam = world.cam
    cfg = world.config
    gen = world.rng if rng is None else rng
    tool = world.true_pose
    if world.held_brick is not None:
        return Observation(cam.width_px, cam.height_px, tool.z_mm, (), None, tuple(meta))

    ap_r = cfg.aperture_radius_px(cam)
    ap_r2 = ap_r * ap_r
    to_cam = rot2d(-tool.yaw_deg)
    # tool-tip vibration: one shift per capture, common to every mask
    # and the reflection, drawn before any per-knob noise
    if noise.pointing_sigma_px > 0:
        shift = gen.normal(0.0, noise.pointing_sigma_px, size=2)
        shift_u, shift_v = float(shift[0]), float(shift[1])
    else:
        shift_u = shift_v = 0.0
    masks = []
    label = 0
    top_plane = None
    for brick in sorted(world.bricks, key=lambda b: b.brick_id):
        plane = brick.knob_plane_mm(cfg.brick_height_mm)
        z_k = tool.z_mm - plane
        r_px_x = cam.fx_px * brick.spec.knob_radius_mm / z_k if z_k > 0 else math.inf
        for j, i, kx, ky in brick.knob_positions():
            if world._occluded(kx, ky, brick.level):
                continue
            if z_k <= 0:
                # knob plane at or above the camera: no image is defined
                # if this knob is anywhere near the view
                if math.hypot(kx - tool.x_mm, ky - tool.y_mm) < 50.0:
                    raise RenderError(
                        f"tool z {tool.z_mm} mm at or below knob plane {plane} mm"
                    )
                continue
            cam_vec = to_cam @ np.array([kx - tool.x_mm, ky - tool.y_mm])
            u = cam.cx + cam.fx_px * cam_vec[0] / z_k + shift_u
            v = cam.cy + cam.fy_px * cam_vec[1] / z_k + shift_v
            ry_px = cam.fy_px * brick.spec.knob_radius_mm / z_k
            margin = 4.0 * noise.mask_boundary_sigma_px + 1.0
            x_lo = max(0, int(math.floor(u - r_px_x - margin)))
            x_hi = min(cam.width_px - 1, int(math.ceil(u + r_px_x + margin)))
            y_lo = max(0, int(math.floor(v - ry_px - margin)))
            y_hi = min(cam.height_px - 1, int(math.ceil(v + ry_px + margin)))
            if x_lo > x_hi or y_lo > y_hi:
                continue
            # cheap aperture cull before any rng draw so culling never
            # perturbs the noise stream of visible knobs
            if math.hypot(u - cam.cx, v - cam.cy) > ap_r + r_px_x + margin:
                continue
            if noise.mask_dropout > 0 and gen.random() < noise.mask_dropout:
                continue
            xs = np.arange(x_lo, x_hi + 1, dtype=np.float64)
            ys = np.arange(y_lo, y_hi + 1, dtype=np.float64)
            gx, gy = np.meshgrid(xs, ys)
            nx = (gx - u) / r_px_x
            ny = (gy - v) / ry_px
            rho = np.sqrt(nx * nx + ny * ny)
            if noise.mask_boundary_sigma_px > 0:
                k = noise.boundary_harmonics
                coeffs = gen.normal(0.0, noise.mask_boundary_sigma_px / math.sqrt(k), size=(2, k))
                phi = np.arctan2(ny, nx)
                jitter = np.zeros_like(rho)
                for h in range(1, k + 1):
                    jitter += coeffs[0, h - 1] * np.cos(h * phi) + coeffs[1, h - 1] * np.sin(
                        h * phi
                    )
                r_mean = 0.5 * (r_px_x + ry_px)
                inside = rho <= 1.0 + jitter / r_mean
            else:
                inside = rho <= 1.0
            inside &= (gx - cam.cx) ** 2 + (gy - cam.cy) ** 2 <= ap_r2
            if not inside.any():
                continue
            label += 1
            rows = np.flatnonzero(inside.any(axis=1))
            cols = np.flatnonzero(inside.any(axis=0))
            crop = inside[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
            masks.append(
                KnobMask(label, crop, x0_px=x_lo + int(cols[0]), y0_px=y_lo + int(rows[0]))
            )
            if top_plane is None or plane > top_plane:
                top_plane = plane

    reflection = None
    surface = _reflection_surface(world, tool.x_mm, tool.y_mm)
    if surface is not None:
        plane = surface.knob_plane_mm(cfg.brick_height_mm)
        if tool.z_mm > plane:
            theta_x = surface.tilt.theta_x_deg - tool.roll_deg
            theta_y = surface.tilt.theta_y_deg - tool.pitch_deg
            if abs(theta_x) < 90.0 and abs(theta_y) < 90.0:
                rx = cam.cx + cam.fx_px * math.tan(math.radians(theta_x)) + shift_u
                ry = cam.cy + cam.fy_px * math.tan(math.radians(theta_y)) + shift_v
                if noise.reflection_sigma_px > 0:
                    d = gen.normal(0.0, noise.reflection_sigma_px, size=2)
                    rx += d[0]
                    ry += d[1]
                if 0 <= rx < cam.width_px and 0 <= ry < cam.height_px:
                    reflection = (rx, ry)
                    if top_plane is None:
                        top_plane = plane

    z_obs = tool.z_mm - top_plane if top_plane is not None else tool.z_mm
    return Observation(
        width_px=cam.width_px,
        height_px=cam.height_px,
        z_mm=z_obs,
        masks=tuple(masks),
        reflection_px=reflection,
        meta=tuple(meta),
    )


class SimulatorProvider:
    """ObservationProvider view of a WorldState: capture() renders the
    current true pose, optionally commanding a move first."""

    def __init__(self, world: WorldState, noise: NoiseModel = NOISE_FREE):
        self.world = world
        self.noise = noise

    def capture(self, tool_pose: Optional[ToolPose] = None) -> Observation:
        if tool_pose is not None:
            self.world.command_move(tool_pose)
        return render_observation(self.world, self.noise)
