"""Repeatable experiment sweeps over the synthetic world.

Two families:

* accuracy sweeps jog a perfectly calibrated tool over a grid of known
  planar offsets (or brick tilts) and score the estimator against the
  commanded ground truth;
* the robustness sweep injects a hidden calibration error of growing
  magnitude and runs the full pick-and-place process under the
  closed-loop and open-loop policies.

Every sweep is a pure function of its config and seed: rows come out in
a fixed order, floats are written with fixed precision, JSON keys are
sorted, and figures render through the deterministic Agg path, so a
rerun reproduces every output file byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import figures
from .configio import AppConfig
from .errors import TipcamError
from .geometry import TiltAngles
from .knobs import measure_planar_offset
from .masks import read_observation
from .servo import ServoRunner, TrialRecord, calibrate
from .simworld import Brick, PairSite, ToolPose, WorldState, render_observation
from .tilt import ReflectionMeasurement, tilt_from_reflection

DEFAULT_DELTAS = (0.4, 0.8, 1.2, 1.6, 2.0)
DEFAULT_TRIALS = 12
POLICIES = ("closed", "open")

# corner-knob coordinates of the two bricks in the manipulation scene,
# chosen so both target pair sites sit well inside the workspace and
# neither brick shows up in the other's working view
_BASE_CORNER = (-40.0, -4.0)
_PICK_CORNER = (20.0, -4.0)
_TARGET_KNOBS = ((0, 1), (1, 1))


# -- output helpers -----------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[dict]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[k]) for k in header))
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _jsonable(obj):
    """Recursively convert dataclasses/tuples for JSON, mapping
    non-finite floats to null (JSON has no inf/nan)."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {
            f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)
        }
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _sample_sd(values: list[float]) -> Optional[float]:
    if len(values) < 2:
        return None
    return float(np.std(np.asarray(values), ddof=1))


def _mean(values: list[float]) -> Optional[float]:
    if not values:
        return None
    return float(np.mean(np.asarray(values)))


# -- world builders -----------------------------------------------------


def _find_pair(world: WorldState, brick_id: int, knob_a, knob_b) -> PairSite:
    for site in world.pair_sites():
        if site.brick_id == brick_id and site.knob_a == knob_a and site.knob_b == knob_b:
            return site
    raise ValueError(f"brick {brick_id} has no pair {knob_a}-{knob_b}")


def build_measurement_world(cfg: AppConfig, seed) -> tuple[WorldState, PairSite]:
    """One brick at the origin with the tool parked over its first
    column pair: the scene every accuracy sweep measures against."""
    brick = Brick(brick_id=1, spec=cfg.brick, x_mm=0.0, y_mm=0.0)
    world = WorldState(
        cfg.camera,
        cfg.world,
        [brick],
        ToolPose(0.0, 0.0, cfg.world.brick_height_mm + cfg.servo.working_z_mm),
        seed=seed,
    )
    site = _find_pair(world, 1, (0, 0), (1, 0))
    world.command_move(
        ToolPose(
            site.mid_x_mm,
            site.mid_y_mm,
            brick.knob_plane_mm(cfg.world.brick_height_mm) + cfg.servo.working_z_mm,
            site.aligned_tool_yaw(),
        )
    )
    return world, site


def build_trial_world(cfg: AppConfig, seed) -> tuple[WorldState, PairSite, PairSite]:
    """Manipulation scene: a base brick to build on and a source brick
    to fetch, 60 mm apart. Returns (world, pick_site, place_site)."""
    base = Brick(brick_id=1, spec=cfg.brick, x_mm=_BASE_CORNER[0], y_mm=_BASE_CORNER[1])
    source = Brick(brick_id=2, spec=cfg.brick, x_mm=_PICK_CORNER[0], y_mm=_PICK_CORNER[1])
    world = WorldState(
        cfg.camera,
        cfg.world,
        [base, source],
        ToolPose(0.0, 0.0, cfg.world.brick_height_mm + cfg.servo.working_z_mm),
        seed=seed,
    )
    place_site = _find_pair(world, 1, *_TARGET_KNOBS)
    pick_site = _find_pair(world, 2, *_TARGET_KNOBS)
    return world, pick_site, place_site


# -- accuracy sweeps ----------------------------------------------------


def _grid(step_count: int, step_size: float) -> list[float]:
    return [i * step_size for i in range(-step_count, step_count + 1)]


def run_accuracy_sweep(
    cfg: AppConfig,
    axis: str,
    seed: int,
    out_dir: Path,
    step_count: int = 3,
    step_mm: float = 0.5,
    step_deg: float = 2.0,
) -> dict:
    """Jog the tool (or tilt the brick) over a fixed grid and score the
    estimator against ground truth.

    axis 'xy' sweeps a (2k+1)^2 grid of planar jogs, 'yaw' a line of
    2k+1 yaw jogs at double the angular step, 'tilt' a (2k+1)^2 grid of
    brick tilts. Writes accuracy_<axis>.csv, accuracy_<axis>_summary.json
    and accuracy_<axis>.png into out_dir and returns the summary.
    """
    if axis not in ("xy", "yaw", "tilt"):
        raise ValueError(f"unknown accuracy axis {axis!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    calib = calibrate(
        cfg.camera, cfg.brick, cfg.fit.weights, cfg.servo.working_z_mm, cfg.world,
        cfg.fit.support_k,
    )
    world, _site = build_measurement_world(cfg, seed)
    aligned = world.commanded_pose
    rows: list[dict] = []

    def measure_offset_at(pose: ToolPose):
        world.command_move(pose)
        obs = render_observation(world, cfg.noise)
        offset, _pair = measure_planar_offset(
            obs, cfg.camera, cfg.brick, cfg.fit.weights, calib.expected_pair_px,
            cfg.fit.support_k,
        )
        return offset

    if axis == "xy":
        steps = _grid(step_count, step_mm)
        for dx in steps:
            for dy in steps:
                row = {
                    "truth_dx_mm": -dx,
                    "truth_dy_mm": -dy,
                    "measured_dx_mm": math.nan,
                    "measured_dy_mm": math.nan,
                    "measured_dyaw_deg": math.nan,
                    "err_dx_mm": math.nan,
                    "err_dy_mm": math.nan,
                    "status": "ok",
                }
                try:
                    off = measure_offset_at(
                        aligned.at(x=aligned.x_mm + dx, y=aligned.y_mm + dy)
                    )
                    row.update(
                        measured_dx_mm=off.dx_mm,
                        measured_dy_mm=off.dy_mm,
                        measured_dyaw_deg=off.dyaw_deg,
                        err_dx_mm=off.dx_mm - (-dx),
                        err_dy_mm=off.dy_mm - (-dy),
                    )
                except (TipcamError, ValueError) as exc:
                    row["status"] = type(exc).__name__
                rows.append(row)
        header = [
            "truth_dx_mm", "truth_dy_mm", "measured_dx_mm", "measured_dy_mm",
            "measured_dyaw_deg", "err_dx_mm", "err_dy_mm", "status",
        ]
        ok = [r for r in rows if r["status"] == "ok"]
        errs_x = [r["err_dx_mm"] for r in ok]
        errs_y = [r["err_dy_mm"] for r in ok]
        summary = {
            "axis": axis,
            "rows": len(rows),
            "failures": len(rows) - len(ok),
            "seed": seed,
            "sd_x_mm": _sample_sd(errs_x),
            "sd_y_mm": _sample_sd(errs_y),
            "sd_position_mm": _sample_sd(errs_x + errs_y),
            "mean_err_x_mm": _mean(errs_x),
            "mean_err_y_mm": _mean(errs_y),
        }
        figures.plot_accuracy_xy(rows, out_dir / "accuracy_xy.png")

    elif axis == "yaw":
        steps = _grid(step_count + 1, step_deg)
        for dyaw in steps:
            row = {
                "truth_dyaw_deg": -dyaw,
                "measured_dyaw_deg": math.nan,
                "measured_dx_mm": math.nan,
                "measured_dy_mm": math.nan,
                "err_dyaw_deg": math.nan,
                "status": "ok",
            }
            try:
                off = measure_offset_at(aligned.at(yaw=aligned.yaw_deg + dyaw))
                row.update(
                    measured_dyaw_deg=off.dyaw_deg,
                    measured_dx_mm=off.dx_mm,
                    measured_dy_mm=off.dy_mm,
                    err_dyaw_deg=off.dyaw_deg - (-dyaw),
                )
            except (TipcamError, ValueError) as exc:
                row["status"] = type(exc).__name__
            rows.append(row)
        header = [
            "truth_dyaw_deg", "measured_dyaw_deg", "measured_dx_mm",
            "measured_dy_mm", "err_dyaw_deg", "status",
        ]
        ok = [r for r in rows if r["status"] == "ok"]
        errs = [r["err_dyaw_deg"] for r in ok]
        summary = {
            "axis": axis,
            "rows": len(rows),
            "failures": len(rows) - len(ok),
            "seed": seed,
            "sd_yaw_deg": _sample_sd(errs),
            "mean_err_yaw_deg": _mean(errs),
        }
        figures.plot_accuracy_scalar(
            rows, "truth_dyaw_deg", "measured_dyaw_deg", "deg", out_dir / "accuracy_yaw.png"
        )

    else:
        steps = _grid(step_count, step_deg)
        brick = world.bricks[0]
        for tx in steps:
            for ty in steps:
                row = {
                    "truth_tilt_x_deg": tx,
                    "truth_tilt_y_deg": ty,
                    "measured_tilt_x_deg": math.nan,
                    "measured_tilt_y_deg": math.nan,
                    "err_x_deg": math.nan,
                    "err_y_deg": math.nan,
                    "status": "ok",
                }
                try:
                    brick.tilt = TiltAngles(tx, ty)
                    world.command_move(aligned)
                    obs = render_observation(world, cfg.noise)
                    if obs.reflection_px is None:
                        raise TipcamError("no reflection in view")
                    tilt = tilt_from_reflection(
                        ReflectionMeasurement.from_pixels(
                            obs.reflection_px, calib.expected_reflection_px
                        ),
                        cfg.camera,
                    )
                    row.update(
                        measured_tilt_x_deg=tilt.theta_x_deg,
                        measured_tilt_y_deg=tilt.theta_y_deg,
                        err_x_deg=tilt.theta_x_deg - tx,
                        err_y_deg=tilt.theta_y_deg - ty,
                    )
                except (TipcamError, ValueError) as exc:
                    row["status"] = type(exc).__name__
                rows.append(row)
        brick.tilt = TiltAngles(0.0, 0.0)
        header = [
            "truth_tilt_x_deg", "truth_tilt_y_deg", "measured_tilt_x_deg",
            "measured_tilt_y_deg", "err_x_deg", "err_y_deg", "status",
        ]
        ok = [r for r in rows if r["status"] == "ok"]
        errs_x = [r["err_x_deg"] for r in ok]
        errs_y = [r["err_y_deg"] for r in ok]
        summary = {
            "axis": axis,
            "rows": len(rows),
            "failures": len(rows) - len(ok),
            "seed": seed,
            "sd_x_deg": _sample_sd(errs_x),
            "sd_y_deg": _sample_sd(errs_y),
            "sd_tilt_deg": _sample_sd(errs_x + errs_y),
            "mean_err_x_deg": _mean(errs_x),
            "mean_err_y_deg": _mean(errs_y),
        }
        figures.plot_accuracy_tilt(rows, out_dir / "accuracy_tilt.png")

    _write_csv(out_dir / f"accuracy_{axis}.csv", header, rows)
    _write_json(out_dir / f"accuracy_{axis}_summary.json", summary)
    return summary


# -- robustness sweep ---------------------------------------------------


def _phase(record: TrialRecord, name: str):
    for phase in record.phases:
        if phase.name == name:
            return phase
    return None


def run_robustness_sweep(
    cfg: AppConfig,
    deltas: Sequence[float] = DEFAULT_DELTAS,
    trials: int = DEFAULT_TRIALS,
    policies: Sequence[str] = POLICIES,
    seed: int = 0,
    out_dir: Path = Path("."),
) -> dict:
    """Run the full manipulation process over a grid of injected
    calibration errors, several trials per cell, per policy.

    Each trial runs in a fresh world seeded by (seed, delta index,
    policy index, trial index), so cells are independent and the whole
    sweep replays exactly. Writes robustness.csv, trials.jsonl,
    robustness_summary.json and robustness.png into out_dir.
    """
    for policy in policies:
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    calib = calibrate(
        cfg.camera, cfg.brick, cfg.fit.weights, cfg.servo.working_z_mm, cfg.world,
        cfg.fit.support_k,
    )
    rows: list[dict] = []
    traces: list[dict] = []
    rates: dict[str, list[float]] = {p: [] for p in policies}

    for di, delta in enumerate(deltas):
        successes = {p: 0 for p in policies}
        for pi, policy in enumerate(policies):
            for t in range(trials):
                world, pick_site, place_site = build_trial_world(cfg, (seed, di, pi, t))
                world.inject_calibration_error(delta)
                runner = ServoRunner(
                    world, cfg.brick, cfg.fit.weights, cfg.servo, cfg.noise,
                    cfg.tolerance, calib, cfg.fit.support_k,
                )
                record = runner.run_manipulation(
                    pick_site, place_site, open_loop=(policy == "open")
                )
                successes[policy] += int(record.success)
                peek = _phase(record, "peek")
                pick = _phase(record, "pick")
                place = _phase(record, "place")
                rows.append(
                    {
                        "delta_mm": delta,
                        "policy": policy,
                        "trial": t,
                        "success": int(record.success),
                        "failure_stage": record.failure_stage or "",
                        "pick_outcome": pick.attempt_outcome if pick else "",
                        "place_outcome": place.attempt_outcome if place else "",
                        "wrong_pair": (
                            pick.servo.wrong_pair
                            if pick and pick.servo and pick.servo.wrong_pair is not None
                            else ""
                        ),
                        "peek_dx_mm": peek.recorded.dx_mm if peek and peek.recorded else None,
                        "peek_dy_mm": peek.recorded.dy_mm if peek and peek.recorded else None,
                        "peek_dyaw_deg": peek.recorded.dyaw_deg if peek and peek.recorded else None,
                        "servo_steps": sum(
                            len(p.servo.steps) for p in record.phases if p.servo is not None
                        ),
                    }
                )
                traces.append(
                    {
                        "delta_mm": delta,
                        "policy": policy,
                        "trial": t,
                        "record": _jsonable(record),
                    }
                )
        for policy in policies:
            rates[policy].append(successes[policy] / trials)

    header = [
        "delta_mm", "policy", "trial", "success", "failure_stage", "pick_outcome",
        "place_outcome", "wrong_pair", "peek_dx_mm", "peek_dy_mm", "peek_dyaw_deg",
        "servo_steps",
    ]
    _write_csv(out_dir / "robustness.csv", header, rows)
    with open(out_dir / "trials.jsonl", "w") as fh:
        for trace in traces:
            fh.write(json.dumps(trace, sort_keys=True) + "\n")
    summary = {
        "deltas_mm": [float(d) for d in deltas],
        "trials_per_cell": trials,
        "policies": list(policies),
        "success_rate": rates,
        "seed": seed,
        "rows": len(rows),
    }
    _write_json(out_dir / "robustness_summary.json", summary)
    figures.plot_robustness([float(d) for d in deltas], rates, out_dir / "robustness.png")
    return summary


# -- replay ---------------------------------------------------------------


def run_replay(cfg: AppConfig, input_path, out_dir: Path) -> dict:
    """Run the estimator over recorded observation containers.

    input_path is one container file or a directory of them (processed
    in sorted name order). Each observation is scored against the
    calibrated expectation for the configured working distance; rows
    that fail to measure carry the failure name in their status column.
    Writes replay.csv and replay_summary.json into out_dir.
    """
    input_path = Path(input_path)
    if input_path.is_dir():
        paths = sorted(p for p in input_path.iterdir() if p.is_file())
    elif input_path.exists():
        paths = [input_path]
    else:
        raise FileNotFoundError(f"no observation file or directory at {input_path}")
    if not paths:
        raise FileNotFoundError(f"no observation files in {input_path}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    calib = calibrate(
        cfg.camera, cfg.brick, cfg.fit.weights, cfg.servo.working_z_mm, cfg.world,
        cfg.fit.support_k,
    )
    rows: list[dict] = []
    for path in paths:
        row = {
            "file": path.name,
            "masks": 0,
            "z_mm": math.nan,
            "dx_mm": math.nan,
            "dy_mm": math.nan,
            "dyaw_deg": math.nan,
            "tilt_x_deg": math.nan,
            "tilt_y_deg": math.nan,
            "status": "ok",
        }
        try:
            obs = read_observation(path)
            row["masks"] = len(obs.masks)
            row["z_mm"] = obs.z_mm
            offset, _pair = measure_planar_offset(
                obs, cfg.camera, cfg.brick, cfg.fit.weights, calib.expected_pair_px,
                cfg.fit.support_k,
            )
            row.update(dx_mm=offset.dx_mm, dy_mm=offset.dy_mm, dyaw_deg=offset.dyaw_deg)
            if obs.reflection_px is not None:
                tilt = tilt_from_reflection(
                    ReflectionMeasurement.from_pixels(
                        obs.reflection_px, calib.expected_reflection_px
                    ),
                    cfg.camera,
                )
                row.update(tilt_x_deg=tilt.theta_x_deg, tilt_y_deg=tilt.theta_y_deg)
        except (TipcamError, ValueError, OSError) as exc:
            row["status"] = type(exc).__name__
        rows.append(row)
    header = [
        "file", "masks", "z_mm", "dx_mm", "dy_mm", "dyaw_deg",
        "tilt_x_deg", "tilt_y_deg", "status",
    ]
    _write_csv(out_dir / "replay.csv", header, rows)
    ok = sum(1 for r in rows if r["status"] == "ok")
    summary = {"files": len(rows), "measured": ok, "failures": len(rows) - ok}
    _write_json(out_dir / "replay_summary.json", summary)
    return summary
