"""WebSocket bridge exposing the simulator to a human operator.

One session per connection: a seeded world with a single brick placed
about `brick_distance_mm` from the tool in a random direction, a hidden
calibration error, and a trial clock. The operator jogs the tool,
switches between the tool-tip view and a fixed oblique scene view, and
ends the trial with a pick attempt; elapsed time and the true residual
are recorded.

Wire protocol (JSON text messages over /ws, one document per message):

    client -> server
      {"type": "jog", "dx_mm": f, "dy_mm": f, "dyaw_deg": f}
      {"type": "set-view", "view": "eif" | "third-person"}
      {"type": "attempt-pick"}
      {"type": "reset"}

    server -> client (state frame, sent on connect and after every
    applied command)
      {"type": "state", "session": id, "seq": n, "view": v,
       "clock_ms": f, "trial_over": b, "held": b,
       "tool": {"x_mm": f, "y_mm": f, "z_mm": f, "yaw_deg": f},
       "frame": {"width": w, "height": h, "encoding": "zlib+base64",
                 "data": base64 of zlib-compressed row-major uint8},
       "digest": sha256 hex of the canonical world state,
       "outcome": null | {"outcome": s, "residual_mm": f,
                          "residual_yaw_deg": f, "elapsed_ms": f,
                          "brick_id": n}}

    server -> client (rejected command; session state unchanged)
      {"type": "error", "error": reason, "seq": last state seq}

Frame sequence numbers increase strictly across the whole session,
resets included, so a client acting on frame N acts on state version N.
Jog steps are clamped to the configured bounds; moves outside the
workspace are rejected. The command log kept per session replays to the
identical outcome (residuals exact, clock values excluded): see
replay_commands.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import time
import zlib
from typing import Callable, Optional, Sequence

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket
from starlette.websockets import WebSocketDisconnect

from .configio import AppConfig, default_config
from .errors import MotionError, WorldStateError
from .geometry import rot2d
from .simworld import Brick, NoiseModel, ToolPose, WorldState, render_observation

VIEWS = ("eif", "third-person")

_SCENE_SCALE_PX_PER_MM = 1.4
_SCENE_Y_FORESHORTEN = 0.8
_SCENE_Z_LIFT = 0.5


def _dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True)


# -- rasters ------------------------------------------------------------


def _paint(img: np.ndarray, u: float, v: float, value: int, half: int = 1) -> None:
    r, c = int(round(v)), int(round(u))
    r0, r1 = max(0, r - half), min(img.shape[0], r + half + 1)
    c0, c1 = max(0, c - half), min(img.shape[1], c + half + 1)
    if r0 < r1 and c0 < c1:
        img[r0:r1, c0:c1] = value


def _disc(img: np.ndarray, u: float, v: float, radius: float, value: int) -> None:
    r0 = max(0, int(math.floor(v - radius)))
    r1 = min(img.shape[0], int(math.ceil(v + radius)) + 1)
    c0 = max(0, int(math.floor(u - radius)))
    c1 = min(img.shape[1], int(math.ceil(u + radius)) + 1)
    if r0 >= r1 or c0 >= c1:
        return
    yy, xx = np.ogrid[r0:r1, c0:c1]
    img[r0:r1, c0:c1][(xx - u) ** 2 + (yy - v) ** 2 <= radius * radius] = value


def render_eif_frame(world: WorldState, noise: NoiseModel) -> np.ndarray:
    """Composite tool-tip view: aperture window, knob masks, center
    crosshair, reflection dot. Grayscale uint8, image-sized."""
    cam = world.cam
    img = np.zeros((cam.height_px, cam.width_px), np.uint8)
    ap_r = world.config.aperture_radius_px(cam)
    yy, xx = np.ogrid[: cam.height_px, : cam.width_px]
    img[(xx - cam.cx) ** 2 + (yy - cam.cy) ** 2 <= ap_r * ap_r] = 30
    obs = render_observation(world, noise)
    for mask in obs.masks:
        img[
            mask.y0_px : mask.y0_px + mask.height,
            mask.x0_px : mask.x0_px + mask.width,
        ][mask.bitmap] = 200
    cx, cy = int(round(cam.cx)), int(round(cam.cy))
    img[max(0, cy - 8) : cy + 9, cx] = 255
    img[cy, max(0, cx - 8) : cx + 9] = 255
    if obs.reflection_px is not None:
        _disc(img, obs.reflection_px[0], obs.reflection_px[1], 2.0, 255)
    return img


def _scene_project(cam, x_mm: float, y_mm: float, z_mm: float) -> tuple[float, float]:
    s = _SCENE_SCALE_PX_PER_MM
    u = cam.width_px / 2.0 + s * x_mm
    v = cam.height_px / 2.0 + s * (_SCENE_Y_FORESHORTEN * y_mm - _SCENE_Z_LIFT * z_mm)
    return u, v


def render_scene_frame(world: WorldState) -> np.ndarray:
    """Fixed oblique synthetic overview of the whole board: bricks as
    filled footprints with knob dots, the tool as a bright crosshair at
    its true pose. A schematic stand-in for an external camera."""
    cam = world.cam
    cfg = world.config
    img = np.full((cam.height_px, cam.width_px), 16, np.uint8)
    for x in cfg.workspace_x_mm:
        for y in np.arange(cfg.workspace_y_mm[0], cfg.workspace_y_mm[1] + 1.0, 2.0):
            _paint(img, *_scene_project(cam, x, float(y), 0.0), 40, half=0)
    for y in cfg.workspace_y_mm:
        for x in np.arange(cfg.workspace_x_mm[0], cfg.workspace_x_mm[1] + 1.0, 2.0):
            _paint(img, *_scene_project(cam, float(x), y, 0.0), 40, half=0)
    for brick in sorted(world.bricks, key=lambda b: (b.level, b.brick_id)):
        spec = brick.spec
        half = spec.knob_pitch_mm / 2.0
        plane = brick.knob_plane_mm(cfg.brick_height_mm)
        rot = rot2d(brick.yaw_deg)
        body = 90 + 30 * brick.level
        for lx in np.arange(-half, (spec.cols - 1) * spec.knob_pitch_mm + half + 0.5, 1.0):
            for ly in np.arange(-half, (spec.rows - 1) * spec.knob_pitch_mm + half + 0.5, 1.0):
                wx, wy = rot @ (lx, ly)
                _paint(
                    img,
                    *_scene_project(cam, brick.x_mm + wx, brick.y_mm + wy, plane),
                    body,
                )
        for _, _, kx, ky in brick.knob_positions():
            u, v = _scene_project(cam, kx, ky, plane)
            _disc(img, u, v, _SCENE_SCALE_PX_PER_MM * spec.knob_radius_mm, 170)
    tp = world.true_pose
    u, v = _scene_project(cam, tp.x_mm, tp.y_mm, tp.z_mm)
    ui, vi = int(round(u)), int(round(v))
    img[max(0, vi - 10) : vi + 11, max(0, ui) : ui + 1] = 255
    img[max(0, vi) : vi + 1, max(0, ui - 10) : ui + 11] = 255
    if world.held_brick is not None:
        _paint(img, u, v, 240, half=3)
    return img


def _encode_frame(raster: np.ndarray) -> dict:
    return {
        "width": int(raster.shape[1]),
        "height": int(raster.shape[0]),
        "encoding": "zlib+base64",
        "data": base64.b64encode(zlib.compress(raster.tobytes(), 6)).decode("ascii"),
    }


# -- sessions -----------------------------------------------------------


class TeleopSession:
    """One operator trial world plus its protocol state machine.

    All methods are synchronous; the websocket handler serializes
    commands, so a session never sees concurrent mutation.
    """

    def __init__(self, session_id: str, cfg: AppConfig, seed: tuple, clock: Callable[[], float]):
        self.session_id = session_id
        self.cfg = cfg
        self.base_seed = tuple(int(s) for s in seed)
        self.clock = clock
        self.seq = 0
        self.view = "eif"
        self.command_log: list[dict] = []
        self.outcomes: list[dict] = []
        self._reset_count = 0
        self._outcome: Optional[dict] = None
        self._trial_over = False
        self._build_world()

    # -- world setup ----------------------------------------------------

    def _build_world(self) -> None:
        cfg = self.cfg
        seed = (*self.base_seed, self._reset_count)
        placement = np.random.default_rng(np.random.SeedSequence((*seed, 7)))
        angle = placement.uniform(0.0, 2.0 * math.pi)
        yaw = placement.uniform(0.0, 360.0)
        center = cfg.teleop.brick_distance_mm * np.array([math.cos(angle), math.sin(angle)])
        grid_center = rot2d(yaw) @ (
            (cfg.brick.cols - 1) * cfg.brick.knob_pitch_mm / 2.0,
            (cfg.brick.rows - 1) * cfg.brick.knob_pitch_mm / 2.0,
        )
        brick = Brick(
            brick_id=1,
            spec=cfg.brick,
            x_mm=float(center[0] - grid_center[0]),
            y_mm=float(center[1] - grid_center[1]),
            yaw_deg=yaw,
        )
        self.world = WorldState(
            cfg.camera,
            cfg.world,
            [brick],
            ToolPose(0.0, 0.0, cfg.world.brick_height_mm + cfg.servo.working_z_mm),
            seed=seed,
        )
        if cfg.teleop.calib_error_mm > 0:
            self.world.inject_calibration_error(cfg.teleop.calib_error_mm)
        self._trial_over = False
        self._outcome = None
        self._trial_start = self.clock()

    # -- state frames ----------------------------------------------------

    def _digest(self) -> str:
        tp, cp = self.world.true_pose, self.world.commanded_pose
        doc = {
            "view": self.view,
            "trial_over": self._trial_over,
            "commanded": [cp.x_mm, cp.y_mm, cp.z_mm, cp.yaw_deg],
            "true": [tp.x_mm, tp.y_mm, tp.z_mm, tp.yaw_deg],
            "held": None if self.world.held_brick is None else self.world.held_brick.brick_id,
            "bricks": [
                [b.brick_id, b.x_mm, b.y_mm, b.yaw_deg, b.level]
                for b in sorted(self.world.bricks, key=lambda b: b.brick_id)
            ],
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def state_frame(self) -> dict:
        self.seq += 1
        raster = (
            render_eif_frame(self.world, self.cfg.noise)
            if self.view == "eif"
            else render_scene_frame(self.world)
        )
        cp = self.world.commanded_pose
        return {
            "type": "state",
            "session": self.session_id,
            "seq": self.seq,
            "view": self.view,
            "clock_ms": 1000.0 * (self.clock() - self._trial_start),
            "trial_over": self._trial_over,
            "held": self.world.held_brick is not None,
            "tool": {"x_mm": cp.x_mm, "y_mm": cp.y_mm, "z_mm": cp.z_mm, "yaw_deg": cp.yaw_deg},
            "frame": _encode_frame(raster),
            "digest": self._digest(),
            "outcome": self._outcome,
        }

    def _error(self, reason: str) -> dict:
        return {"type": "error", "error": reason, "seq": self.seq}

    # -- commands ---------------------------------------------------------

    def handle_raw(self, text: str) -> dict:
        try:
            cmd = json.loads(text)
        except json.JSONDecodeError as exc:
            return self._error(f"malformed command: {exc.msg}")
        if not isinstance(cmd, dict):
            return self._error("malformed command: expected a JSON object")
        return self.handle(cmd)

    def handle(self, cmd: dict) -> dict:
        kind = cmd.get("type")
        if kind == "jog":
            return self._cmd_jog(cmd)
        if kind == "set-view":
            return self._cmd_set_view(cmd)
        if kind == "attempt-pick":
            return self._cmd_attempt_pick()
        if kind == "reset":
            return self._cmd_reset()
        return self._error(f"unknown command type {kind!r}")

    @staticmethod
    def _number(cmd: dict, key: str) -> float:
        value = cmd.get(key, 0.0)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{key} must be a number")
        if not math.isfinite(value):
            raise ValueError(f"{key} must be finite")
        return float(value)

    def _cmd_jog(self, cmd: dict) -> dict:
        if self._trial_over:
            return self._error("trial ended; send reset to start a new one")
        try:
            dx = self._number(cmd, "dx_mm")
            dy = self._number(cmd, "dy_mm")
            dyaw = self._number(cmd, "dyaw_deg")
        except ValueError as exc:
            return self._error(f"malformed command: {exc}")
        opts = self.cfg.teleop
        dx = max(-opts.max_jog_mm, min(opts.max_jog_mm, dx))
        dy = max(-opts.max_jog_mm, min(opts.max_jog_mm, dy))
        dyaw = max(-opts.max_jog_deg, min(opts.max_jog_deg, dyaw))
        try:
            self.world.command_move(self.world.commanded_pose.moved(dx=dx, dy=dy, dyaw=dyaw))
        except MotionError as exc:
            return self._error(str(exc))
        self.command_log.append({"type": "jog", "dx_mm": dx, "dy_mm": dy, "dyaw_deg": dyaw})
        return self.state_frame()

    def _cmd_set_view(self, cmd: dict) -> dict:
        view = cmd.get("view")
        if view not in VIEWS:
            return self._error(f"unknown view {view!r}; expected one of {VIEWS}")
        self.view = view
        self.command_log.append({"type": "set-view", "view": view})
        return self.state_frame()

    def _cmd_attempt_pick(self) -> dict:
        if self._trial_over:
            return self._error("trial ended; send reset to start a new one")
        try:
            result = self.world.attempt_pick(self.cfg.tolerance)
        except WorldStateError as exc:
            return self._error(str(exc))
        elapsed_ms = 1000.0 * (self.clock() - self._trial_start)
        outcome = {
            "outcome": result.outcome,
            "residual_mm": result.residual_mm if math.isfinite(result.residual_mm) else None,
            "residual_yaw_deg": (
                result.residual_yaw_deg if math.isfinite(result.residual_yaw_deg) else None
            ),
            "elapsed_ms": elapsed_ms,
            "brick_id": result.brick_id,
        }
        self._outcome = outcome
        self._trial_over = True
        self.outcomes.append(outcome)
        self.command_log.append({"type": "attempt-pick"})
        return self.state_frame()

    def _cmd_reset(self) -> dict:
        self._reset_count += 1
        self._build_world()
        self.command_log.append({"type": "reset"})
        return self.state_frame()

    def log_document(self) -> dict:
        return {
            "session": self.session_id,
            "seed": list(self.base_seed),
            "commands": self.command_log,
            "outcomes": self.outcomes,
        }


def replay_commands(cfg: AppConfig, seed: Sequence[int], commands: Sequence[dict]) -> list[dict]:
    """Re-run a logged command sequence on a fresh session with the same
    seed and return the outcomes. Residuals and outcomes reproduce the
    live session exactly; elapsed times do not (the replay clock is a
    constant)."""
    session = TeleopSession("replay", cfg, tuple(seed), clock=lambda: 0.0)
    for index, cmd in enumerate(commands):
        reply = session.handle(dict(cmd))
        if reply.get("type") == "error":
            raise ValueError(f"logged command {index} failed on replay: {reply['error']}")
    return session.outcomes


# -- service ------------------------------------------------------------


class TeleopHub:
    """Session registry: one session per websocket connection, retained
    after disconnect so logs stay retrievable."""

    def __init__(self, cfg: AppConfig, clock: Callable[[], float]):
        self.cfg = cfg
        self.clock = clock
        self.sessions: dict[str, TeleopSession] = {}
        self._counter = 0

    def new_session(self) -> TeleopSession:
        self._counter += 1
        session_id = f"s{self._counter}"
        session = TeleopSession(
            session_id, self.cfg, (self.cfg.seed, self._counter), self.clock
        )
        self.sessions[session_id] = session
        return session


def create_app(
    cfg: Optional[AppConfig] = None,
    static_dir=None,
    clock: Callable[[], float] = time.monotonic,
) -> FastAPI:
    """Build the bridge service. static_dir, when given, is served at /
    (the browser console); the API lives at /ws, /healthz and
    /sessions/{id}/log."""
    cfg = cfg if cfg is not None else default_config()
    app = FastAPI(title="tipcam teleop bridge")
    hub = TeleopHub(cfg, clock)
    app.state.hub = hub

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "sessions": len(hub.sessions)}

    @app.get("/sessions/{session_id}/log")
    def session_log(session_id: str) -> dict:
        session = hub.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")
        return session.log_document()

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        await websocket.accept()
        session = hub.new_session()
        await websocket.send_text(_dumps(session.state_frame()))
        try:
            while True:
                raw = await websocket.receive_text()
                await websocket.send_text(_dumps(session.handle_raw(raw)))
        except WebSocketDisconnect:
            pass

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")

    return app
