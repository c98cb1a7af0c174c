"""Visual-servo centering and the four-step manipulation process:
peek at the placement site, pick up, place with feed-forward
compensation, inspect the seated brick.

The servo loop measures the planar offset of the target knob pair from
its calibrated image position, rotates that camera-frame offset into
board axes, and commands the correction scaled by the loop gain until
the measurement falls under the convergence thresholds.

While a brick is held it blocks the camera, so placement cannot servo;
it reuses the offset recorded during the peek step, which is valid
because the calibration error is constant over a trial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .errors import MotionError, PairingError
from .geometry import BrickSpec, CameraModel, PlanarOffset, TiltAngles, normalize_angle_deg, rot2d
from .knobs import FitWeights, fit_observation_masks, measure_planar_offset, select_target_pair
from .masks import Observation
from .simworld import (
    NOISE_FREE,
    ZERO_OFFSET,
    Brick,
    NoiseModel,
    PairSite,
    ToleranceModel,
    ToolPose,
    WorldConfig,
    WorldState,
    render_observation,
)
from .tilt import ReflectionMeasurement, tilt_from_reflection

Vec2 = tuple[float, float]


@dataclass(frozen=True)
class ServoConfig:
    """Convergence thresholds and loop bounds of the centering servo."""

    threshold_mm: float = 0.1
    threshold_deg: float = 0.2
    max_iterations: int = 10
    gain: float = 1.0
    working_z_mm: float = 30.0
    defect_tilt_bound_deg: float = 0.5

    def __post_init__(self):
        if self.threshold_mm <= 0 or self.threshold_deg <= 0:
            raise ValueError("convergence thresholds must be positive")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not 0 < self.gain <= 1:
            raise ValueError(f"gain must be in (0, 1], got {self.gain}")
        if self.working_z_mm <= 0 or self.defect_tilt_bound_deg < 0:
            raise ValueError("working distance and tilt bound must be positive")


@dataclass(frozen=True)
class ServoStep:
    """One loop iteration: what was measured (camera-aligned mm/deg)
    and what correction was commanded (board-frame mm/deg)."""

    measured: PlanarOffset
    correction: PlanarOffset


@dataclass(frozen=True)
class ServoReport:
    steps: tuple[ServoStep, ...]
    converged: bool
    final_residual: Optional[PlanarOffset]
    wrong_pair: Optional[bool]
    failure: Optional[str] = None


@dataclass(frozen=True)
class InspectionReport:
    """Post-placement check: residual position of the seated pair and
    its tilt; defect flags tilt beyond the configured bound."""

    position_offset: PlanarOffset
    tilt: TiltAngles
    defect: bool


@dataclass(frozen=True)
class PhaseReport:
    """Uniform record of one manipulation phase, serializable as-is."""

    name: str
    servo: Optional[ServoReport] = None
    attempt_outcome: Optional[str] = None
    attempt_residual_mm: Optional[float] = None
    attempt_residual_yaw_deg: Optional[float] = None
    recorded: Optional[PlanarOffset] = None
    tilt: Optional[TiltAngles] = None
    failure: Optional[str] = None


@dataclass(frozen=True)
class TrialRecord:
    """Full trace of one peek/pick/place/inspect trial."""

    policy: str
    calib_error: PlanarOffset
    phases: tuple[PhaseReport, ...]
    success: bool
    failure_stage: Optional[str]
    defect: Optional[bool]


@dataclass(frozen=True)
class Calibration:
    """Expected image positions captured over a perfectly aligned brick:
    the two target knob centers (top knob first) and the zero-tilt
    reflection point, all at the stated working distance."""

    expected_pair_px: tuple[Vec2, Vec2]
    expected_reflection_px: Vec2
    z_mm: float


def calibrate(
    cam: CameraModel,
    spec: BrickSpec,
    weights: FitWeights,
    working_z_mm: float,
    world_config: WorldConfig = WorldConfig(),
    support_k: int = 3,
) -> Calibration:
    """Derive expected pixel positions by rendering one perfectly
    aligned brick with zero noise and running the estimator on it.

    Using the estimator itself (rather than the analytic projection)
    bakes its sub-pixel rasterization bias into the expected centers,
    so the bias cancels from every subsequent offset measurement.
    """
    brick = Brick(brick_id=1, spec=spec, x_mm=0.0, y_mm=0.0)
    world = WorldState(cam, world_config, [brick], ToolPose(0.0, 0.0, working_z_mm + 1.0))
    sites = world.pair_sites()
    if not sites:
        raise ValueError(f"brick {spec.rows}x{spec.cols} offers no knob pair to calibrate on")
    col_pairs = [s for s in sites if s.knob_a == (0, 0) and s.knob_b == (1, 0)]
    site = col_pairs[0] if col_pairs else sites[0]
    plane = brick.knob_plane_mm(world_config.brick_height_mm)
    world.command_move(
        ToolPose(site.mid_x_mm, site.mid_y_mm, plane + working_z_mm, site.aligned_tool_yaw())
    )
    obs = render_observation(world, NOISE_FREE)
    fitted = fit_observation_masks(obs, cam, spec, weights, support_k)
    pair = select_target_pair(fitted, cam.center_px, cam, spec, obs.z_mm)
    if obs.reflection_px is None:
        raise ValueError("calibration view shows no reflection; brick too small for a flat site")
    return Calibration(
        expected_pair_px=(pair[0].center_px, pair[1].center_px),
        expected_reflection_px=obs.reflection_px,
        z_mm=working_z_mm,
    )


class ServoRunner:
    """Runs the servo loop and the manipulation process on one world.

    Owns the world exclusively for its lifetime; independent trials use
    independent worlds.
    """

    def __init__(
        self,
        world: WorldState,
        spec: BrickSpec,
        weights: FitWeights,
        servo_cfg: ServoConfig,
        noise: NoiseModel,
        tol: ToleranceModel,
        calibration: Calibration,
        support_k: int = 3,
    ):
        self.world = world
        self.cam = world.cam
        self.spec = spec
        self.weights = weights
        self.cfg = servo_cfg
        self.noise = noise
        self.tol = tol
        self.calibration = calibration
        self.support_k = support_k

    # -- measurement ----------------------------------------------------

    def capture(self) -> Observation:
        return render_observation(self.world, self.noise)

    def measure_offset(self, obs: Observation) -> PlanarOffset:
        offset, _ = measure_planar_offset(
            obs, self.cam, self.spec, self.weights, self.calibration.expected_pair_px,
            self.support_k,
        )
        return offset

    def measure_tilt(self, obs: Observation) -> Optional[TiltAngles]:
        if obs.reflection_px is None:
            return None
        d = ReflectionMeasurement.from_pixels(
            obs.reflection_px, self.calibration.expected_reflection_px
        )
        return tilt_from_reflection(d, self.cam)

    # -- servo loop -----------------------------------------------------

    def _wrong_pair(self, target_key) -> Optional[bool]:
        if target_key is None:
            return None
        tp = self.world.true_pose
        site = self.world.nearest_pair(tp.x_mm, tp.y_mm)
        return site is None or site.key != target_key

    def servo_center(self, target_key=None) -> ServoReport:
        """Iteratively measure and correct until the measured offset is
        under threshold. Never raises on a lost target; the report says
        what happened."""
        steps: list[ServoStep] = []
        last: Optional[PlanarOffset] = None
        for _ in range(self.cfg.max_iterations):
            obs = self.capture()
            try:
                off = self.measure_offset(obs)
            except PairingError as exc:
                return ServoReport(
                    tuple(steps), False, last, None, failure=f"target lost: {exc}"
                )
            last = off
            if off.translation_mm <= self.cfg.threshold_mm and abs(off.dyaw_deg) <= self.cfg.threshold_deg:
                steps.append(ServoStep(off, ZERO_OFFSET))
                return ServoReport(tuple(steps), True, off, self._wrong_pair(target_key))
            g = self.cfg.gain
            board = rot2d(self.world.commanded_pose.yaw_deg) @ (g * off.dx_mm, g * off.dy_mm)
            correction = PlanarOffset(float(board[0]), float(board[1]), g * off.dyaw_deg)
            steps.append(ServoStep(off, correction))
            try:
                self.world.command_move(
                    self.world.commanded_pose.moved(
                        dx=correction.dx_mm, dy=correction.dy_mm, dyaw=correction.dyaw_deg
                    )
                )
            except MotionError as exc:
                return ServoReport(tuple(steps), False, last, None, failure=str(exc))
        return ServoReport(
            tuple(steps),
            False,
            last,
            None,
            failure=f"no convergence within {self.cfg.max_iterations} iterations",
        )

    # -- phases -----------------------------------------------------------

    def _approach(self, site: PairSite, level: Optional[int] = None) -> ToolPose:
        lvl = site.level if level is None else level
        plane = (lvl + 1) * self.world.config.brick_height_mm
        return ToolPose(
            site.mid_x_mm,
            site.mid_y_mm,
            plane + self.cfg.working_z_mm,
            site.aligned_tool_yaw(),
        )

    def peek(self, site: PairSite) -> PhaseReport:
        """Servo over the placement site and record its nominal-vs-true
        offset for feed-forward compensation at placement time."""
        approach = self._approach(site)
        try:
            self.world.command_move(approach)
        except MotionError as exc:
            return PhaseReport("peek", failure=str(exc))
        servo = self.servo_center(site.key)
        if not servo.converged:
            return PhaseReport("peek", servo=servo, failure=servo.failure or "servo did not converge")
        cmd = self.world.commanded_pose
        recorded = PlanarOffset(
            approach.x_mm - cmd.x_mm,
            approach.y_mm - cmd.y_mm,
            normalize_angle_deg(approach.yaw_deg - cmd.yaw_deg),
        )
        tilt = self.measure_tilt(self.capture())
        return PhaseReport("peek", servo=servo, recorded=recorded, tilt=tilt)

    def _engage(self, plane_mm: float):
        pose = self.world.commanded_pose
        self.world.command_move(pose.at(z=plane_mm))

    def pick(self, site: PairSite, closed_loop: bool = True) -> PhaseReport:
        """Approach, optionally servo, descend, and attempt the pick."""
        approach = self._approach(site)
        try:
            self.world.command_move(approach)
        except MotionError as exc:
            return PhaseReport("pick", failure=str(exc))
        servo = None
        if closed_loop:
            servo = self.servo_center(site.key)
            if not servo.converged:
                return PhaseReport("pick", servo=servo, failure=servo.failure or "servo did not converge")
        plane = (site.level + 1) * self.world.config.brick_height_mm
        self._engage(plane)
        result = self.world.attempt_pick(self.tol)
        self._engage(plane + self.cfg.working_z_mm)
        return PhaseReport(
            "pick",
            servo=servo,
            attempt_outcome=result.outcome,
            attempt_residual_mm=result.residual_mm,
            attempt_residual_yaw_deg=result.residual_yaw_deg,
        )

    def place(
        self,
        site: PairSite,
        compensation: Optional[PlanarOffset] = None,
        defect_tilt: Optional[TiltAngles] = None,
    ) -> PhaseReport:
        """Command the placement site corrected by the peek record (the
        camera is blind while holding) and attempt the seat."""
        comp = compensation if compensation is not None else ZERO_OFFSET
        nominal = self._approach(site)
        target = ToolPose(
            nominal.x_mm - comp.dx_mm,
            nominal.y_mm - comp.dy_mm,
            nominal.z_mm,
            normalize_angle_deg(nominal.yaw_deg - comp.dyaw_deg),
        )
        try:
            self.world.command_move(target)
        except MotionError as exc:
            return PhaseReport("place", failure=str(exc))
        seat_plane = (site.level + 2) * self.world.config.brick_height_mm
        self._engage(seat_plane)
        result = self.world.attempt_place(self.tol, defect_tilt)
        self._engage(seat_plane + self.cfg.working_z_mm)
        return PhaseReport(
            "place",
            attempt_outcome=result.outcome,
            attempt_residual_mm=result.residual_mm,
            attempt_residual_yaw_deg=result.residual_yaw_deg,
        )

    def inspect(self, site: PairSite) -> tuple[PhaseReport, Optional[InspectionReport]]:
        """Servo over the just-seated pair one level above the base site
        and read back its residual position and tilt."""
        seated = self.world.nearest_pair(site.mid_x_mm, site.mid_y_mm)
        key = seated.key if seated is not None else None
        approach = self._approach(site, level=site.level + 1)
        try:
            self.world.command_move(approach)
        except MotionError as exc:
            return PhaseReport("inspection", failure=str(exc)), None
        servo = self.servo_center(key)
        if not servo.converged:
            return (
                PhaseReport("inspection", servo=servo, failure=servo.failure or "servo did not converge"),
                None,
            )
        cmd = self.world.commanded_pose
        position = PlanarOffset(
            approach.x_mm - cmd.x_mm,
            approach.y_mm - cmd.y_mm,
            normalize_angle_deg(approach.yaw_deg - cmd.yaw_deg),
        )
        tilt = self.measure_tilt(self.capture())
        if tilt is None:
            return (
                PhaseReport("inspection", servo=servo, recorded=position, failure="no reflection visible"),
                None,
            )
        report = InspectionReport(
            position_offset=position,
            tilt=tilt,
            defect=tilt.magnitude_deg > self.cfg.defect_tilt_bound_deg,
        )
        return PhaseReport("inspection", servo=servo, recorded=position, tilt=tilt), report

    # -- full process -----------------------------------------------------

    def run_manipulation(
        self,
        pick_site: PairSite,
        place_site: PairSite,
        open_loop: bool = False,
        defect_tilt: Optional[TiltAngles] = None,
    ) -> TrialRecord:
        """Execute the four manipulation steps in order, short-circuiting
        on the first hard failure. Open-loop mode skips the peek and all
        servoing; it is the robustness baseline."""
        policy = "open" if open_loop else "closed"
        delta = self.world.calib_error
        phases: list[PhaseReport] = []

        compensation = None
        if not open_loop:
            peek = self.peek(place_site)
            phases.append(peek)
            if peek.failure is not None:
                return TrialRecord(policy, delta, tuple(phases), False, "peek", None)
            compensation = peek.recorded

        pick = self.pick(pick_site, closed_loop=not open_loop)
        phases.append(pick)
        if pick.failure is not None or pick.attempt_outcome != "success":
            return TrialRecord(policy, delta, tuple(phases), False, "pick", None)

        place = self.place(place_site, compensation, defect_tilt)
        phases.append(place)
        if place.failure is not None or place.attempt_outcome != "success":
            return TrialRecord(policy, delta, tuple(phases), False, "place", None)

        defect = None
        failure_stage = None
        if not open_loop:
            phase, report = self.inspect(place_site)
            phases.append(phase)
            defect = report.defect if report is not None else None
            if phase.failure is not None:
                failure_stage = "inspection"

        return TrialRecord(policy, delta, tuple(phases), True, failure_stage, defect)
