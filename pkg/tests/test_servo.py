"""Tests for the centering servo and the manipulation process.

Hand derivation used throughout: the simulated tool reaches
``true = commanded + calib_error``. With the tool commanded exactly over
a knob pair and a hidden error d = (0.6, -0.8) mm, the camera sees the
pair displaced by -d, so the first servo iteration measures
(-0.6, +0.8) mm. At gain 1 and tool yaw 0 the correction equals the
measurement, the commanded pose moves to mid - d, the true pose lands on
the pair, and the second iteration measures ~0 and terminates: two steps
total. The peek record is ``approach - converged_command = +d``, which
is exactly the feed-forward the blind placement needs.

At 30 mm working distance the scale is 830/30 = 27.667 px/mm, so the
0.1 mm convergence threshold corresponds to 2.77 px of image motion.
"""

import math

import pytest

from tipcam.errors import PairingError
from tipcam.geometry import BrickSpec, PlanarOffset, TiltAngles
from tipcam.servo import ServoConfig, ServoRunner, calibrate
from tipcam.simworld import (
    NOISE_FREE,
    ZERO_OFFSET,
    Brick,
    NoiseModel,
    ToleranceModel,
    ToolPose,
    WorldConfig,
    WorldState,
)

WORKING_Z = 30.0
TOL = ToleranceModel()

# same scene the sweeps use: a base brick to build on and a source brick
# to fetch, pairs on the second knob column of each
BASE_CORNER = (-40.0, -4.0)
PICK_CORNER = (20.0, -4.0)
TARGET_KNOBS = ((0, 1), (1, 1))


@pytest.fixture(scope="module")
def calib():
    return calibrate(CameraModelDefault(), BrickSpec(), FitWeightsDefault(), WORKING_Z)


def CameraModelDefault():
    from tipcam.geometry import CameraModel

    return CameraModel()


def FitWeightsDefault():
    from tipcam.knobs import FitWeights

    return FitWeights()


def find_pair(world, brick_id, knob_a, knob_b):
    return next(
        s
        for s in world.pair_sites()
        if s.brick_id == brick_id and s.knob_a == knob_a and s.knob_b == knob_b
    )


def make_world(cam, spec, calib_error=ZERO_OFFSET, seed=0):
    base = Brick(brick_id=1, spec=spec, x_mm=BASE_CORNER[0], y_mm=BASE_CORNER[1])
    source = Brick(brick_id=2, spec=spec, x_mm=PICK_CORNER[0], y_mm=PICK_CORNER[1])
    world = WorldState(
        cam,
        WorldConfig(),
        [base, source],
        ToolPose(0.0, 0.0, 9.6 + WORKING_Z),
        calib_error=calib_error,
        seed=seed,
    )
    pick_site = find_pair(world, 2, *TARGET_KNOBS)
    place_site = find_pair(world, 1, *TARGET_KNOBS)
    return world, pick_site, place_site


def make_runner(world, calib, noise=NOISE_FREE, servo_cfg=ServoConfig(), tol=TOL):
    return ServoRunner(
        world, BrickSpec(), FitWeightsDefault(), servo_cfg, noise, tol, calib
    )


def approach(world, site):
    world.command_move(
        ToolPose(
            site.mid_x_mm,
            site.mid_y_mm,
            (site.level + 1) * world.config.brick_height_mm + WORKING_Z,
            site.aligned_tool_yaw(),
        )
    )


class TestCalibration:
    def test_pair_symmetric_about_center(self, cam, calib):
        (x0, y0), (x1, y1) = calib.expected_pair_px
        assert y0 < y1
        assert x0 == pytest.approx(x1, abs=1e-6)
        assert x0 == pytest.approx(cam.cx, abs=0.2)
        assert (y0 + y1) / 2.0 == pytest.approx(cam.cy, abs=0.05)

    def test_pair_spacing_matches_projected_pitch(self, cam, spec, calib):
        (_, y0), (_, y1) = calib.expected_pair_px
        expected = cam.fx_px * spec.knob_pitch_mm / WORKING_Z
        assert y1 - y0 == pytest.approx(expected, abs=0.5)

    def test_reflection_at_principal_point(self, cam, calib):
        rx, ry = calib.expected_reflection_px
        assert rx == pytest.approx(cam.cx, abs=1e-9)
        assert ry == pytest.approx(cam.cy, abs=1e-9)

    def test_working_distance_recorded(self, calib):
        assert calib.z_mm == WORKING_Z

    def test_single_knob_brick_rejected(self, cam, weights):
        tiny = BrickSpec(rows=1, cols=1)
        with pytest.raises(ValueError, match="no knob pair"):
            calibrate(cam, tiny, weights, WORKING_Z)


class TestServoCenter:
    def test_zero_error_terminates_without_motion(self, cam, spec, calib):
        world, pick_site, _ = make_world(cam, spec)
        runner = make_runner(world, calib)
        approach(world, pick_site)
        before = world.commanded_pose
        report = runner.servo_center(pick_site.key)
        assert report.converged
        assert len(report.steps) == 1
        assert report.steps[0].correction == ZERO_OFFSET
        assert report.final_residual.translation_mm < 0.02
        assert report.wrong_pair is False
        assert world.commanded_pose == before

    def test_converges_in_two_steps(self, cam, spec, calib):
        error = PlanarOffset(0.6, -0.8, 0.0)
        world, pick_site, _ = make_world(cam, spec, calib_error=error)
        runner = make_runner(world, calib)
        approach(world, pick_site)
        report = runner.servo_center(pick_site.key)
        assert report.converged
        assert report.wrong_pair is False
        assert len(report.steps) == 2
        first = report.steps[0]
        assert first.measured.dx_mm == pytest.approx(-0.6, abs=0.02)
        assert first.measured.dy_mm == pytest.approx(0.8, abs=0.02)
        # tool yaw 0: board frame == camera frame, gain 1
        assert first.correction.dx_mm == pytest.approx(first.measured.dx_mm, abs=1e-12)
        assert first.correction.dy_mm == pytest.approx(first.measured.dy_mm, abs=1e-12)
        tp = world.true_pose
        assert tp.x_mm == pytest.approx(pick_site.mid_x_mm, abs=0.02)
        assert tp.y_mm == pytest.approx(pick_site.mid_y_mm, abs=0.02)

    def test_partial_gain_contracts_monotonically(self, cam, spec, calib):
        world, pick_site, _ = make_world(
            cam, spec, calib_error=PlanarOffset(1.2, 0.0, 0.0)
        )
        runner = make_runner(world, calib, servo_cfg=ServoConfig(gain=0.5))
        approach(world, pick_site)
        report = runner.servo_center(pick_site.key)
        assert report.converged
        sizes = [s.measured.translation_mm for s in report.steps]
        assert all(b < a for a, b in zip(sizes, sizes[1:]))
        # residual halves per iteration: 1.2 * 0.5^k <= 0.1 at k = 4
        assert len(report.steps) == 5

    def test_iteration_budget_exhausted(self, cam, spec, calib):
        world, pick_site, _ = make_world(
            cam, spec, calib_error=PlanarOffset(2.0, 0.0, 0.0)
        )
        cfg = ServoConfig(gain=0.01, max_iterations=2)
        runner = make_runner(world, calib, servo_cfg=cfg)
        approach(world, pick_site)
        report = runner.servo_center(pick_site.key)
        assert not report.converged
        assert len(report.steps) == 2
        assert "no convergence" in report.failure
        assert report.final_residual is not None

    def test_half_pitch_error_locks_onto_neighbour(self, cam, spec, calib):
        # 5 mm along the column direction exceeds half the 8 mm pitch, so
        # the nearest pair in view is the neighbouring column's
        world, pick_site, _ = make_world(
            cam, spec, calib_error=PlanarOffset(5.0, 0.0, 0.0)
        )
        runner = make_runner(world, calib)
        approach(world, pick_site)
        report = runner.servo_center(pick_site.key)
        assert report.converged
        assert report.wrong_pair is True
        tp = world.true_pose
        assert tp.x_mm == pytest.approx(pick_site.mid_x_mm + spec.knob_pitch_mm, abs=0.02)

    def test_empty_view_reports_lost_target(self, cam, spec, calib):
        world, pick_site, _ = make_world(cam, spec)
        runner = make_runner(world, calib)
        world.command_move(ToolPose(150.0, 150.0, 9.6 + WORKING_Z, 0.0))
        report = runner.servo_center(pick_site.key)
        assert not report.converged
        assert report.steps == ()
        assert report.final_residual is None
        assert report.failure.startswith("target lost")


class TestPeek:
    def test_records_injected_error(self, cam, spec, calib):
        error = PlanarOffset(0.6, -0.8, 0.0)
        world, _, place_site = make_world(cam, spec, calib_error=error)
        runner = make_runner(world, calib)
        phase = runner.peek(place_site)
        assert phase.failure is None
        assert phase.name == "peek"
        assert phase.servo.converged
        assert phase.recorded.dx_mm == pytest.approx(0.6, abs=0.02)
        assert phase.recorded.dy_mm == pytest.approx(-0.8, abs=0.02)
        assert phase.recorded.dyaw_deg == pytest.approx(0.0, abs=0.05)
        assert phase.tilt.magnitude_deg == pytest.approx(0.0, abs=0.01)

    def test_zero_error_records_zero(self, cam, spec, calib):
        world, _, place_site = make_world(cam, spec)
        runner = make_runner(world, calib)
        phase = runner.peek(place_site)
        assert phase.recorded.translation_mm < 0.02


class TestManipulation:
    def test_closed_loop_survives_large_error(self, cam, spec, calib):
        error = PlanarOffset(0.9, -1.2, 0.0)
        world, pick_site, place_site = make_world(cam, spec, calib_error=error)
        runner = make_runner(world, calib)
        record = runner.run_manipulation(pick_site, place_site)
        assert record.success
        assert record.failure_stage is None
        assert record.defect is False
        assert [p.name for p in record.phases] == ["peek", "pick", "place", "inspection"]
        assert record.calib_error == error
        placed = world.brick_by_id(2)
        assert placed.level == 1
        assert world.held_brick is None

    def test_open_loop_fails_at_large_error(self, cam, spec, calib):
        error = PlanarOffset(0.9, -1.2, 0.0)
        world, pick_site, place_site = make_world(cam, spec, calib_error=error)
        runner = make_runner(world, calib)
        record = runner.run_manipulation(pick_site, place_site, open_loop=True)
        assert not record.success
        assert record.failure_stage == "pick"
        assert [p.name for p in record.phases] == ["pick"]
        assert record.phases[0].attempt_outcome == "collision"
        assert record.phases[0].servo is None

    def test_open_loop_succeeds_at_small_error(self, cam, spec, calib):
        world, pick_site, place_site = make_world(
            cam, spec, calib_error=PlanarOffset(0.3, 0.0, 0.0)
        )
        runner = make_runner(world, calib)
        record = runner.run_manipulation(pick_site, place_site, open_loop=True)
        assert record.success
        assert record.defect is None
        assert [p.name for p in record.phases] == ["pick", "place"]

    def test_defective_seating_flagged_by_inspection(self, cam, spec, calib):
        world, pick_site, place_site = make_world(cam, spec)
        runner = make_runner(world, calib)
        record = runner.run_manipulation(
            pick_site, place_site, defect_tilt=TiltAngles(1.0, 0.0)
        )
        assert record.success
        assert record.defect is True
        inspection = record.phases[-1]
        assert inspection.name == "inspection"
        assert inspection.tilt.theta_x_deg == pytest.approx(1.0, abs=0.05)
        assert inspection.tilt.theta_y_deg == pytest.approx(0.0, abs=0.05)

    def test_trial_record_repeats_with_seed(self, cam, spec, calib):
        records = []
        for _ in range(2):
            world, pick_site, place_site = make_world(cam, spec, seed=7)
            world.inject_calibration_error(1.0)
            runner = make_runner(world, calib, noise=NoiseModel())
            records.append(runner.run_manipulation(pick_site, place_site))
        assert records[0] == records[1]
        world, pick_site, place_site = make_world(cam, spec, seed=8)
        world.inject_calibration_error(1.0)
        other = make_runner(world, calib, noise=NoiseModel()).run_manipulation(
            pick_site, place_site
        )
        assert other != records[0]


class TestServoConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"threshold_mm": 0.0},
            {"threshold_deg": -0.1},
            {"max_iterations": 0},
            {"gain": 0.0},
            {"gain": 1.5},
            {"working_z_mm": -1.0},
            {"defect_tilt_bound_deg": -0.5},
        ],
    )
    def test_invalid_config_rejected(self, kwargs):
        with pytest.raises(ValueError):
            ServoConfig(**kwargs)

    def test_gain_of_one_allowed(self):
        assert ServoConfig(gain=1.0).gain == 1.0


def test_tilt_magnitude_is_larger_axis():
    assert TiltAngles(3.0, 4.0).magnitude_deg == pytest.approx(4.0)
    assert math.isclose(TiltAngles(0.0, 0.0).magnitude_deg, 0.0)
