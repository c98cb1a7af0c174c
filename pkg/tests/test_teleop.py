"""Tests for the operator bridge: session state machine, wire protocol,
frame encoding, command log replay, and the HTTP/WebSocket service.

The session is exercised directly (synchronous, injectable clock) for
the protocol semantics, and through the ASGI test client for the
transport. The hidden calibration error makes the pick residual exactly
its magnitude when the operator centers the commanded pose on the pair,
which gives a machine-checkable ground truth for outcome reporting.
"""

import base64
import dataclasses
import json
import zlib

import numpy as np
import pytest
from fastapi.testclient import TestClient

from tipcam.configio import TeleopOptions, default_config
from tipcam.geometry import normalize_angle_deg
from tipcam.simworld import WorldConfig
from tipcam.teleop import (
    VIEWS,
    TeleopSession,
    create_app,
    render_eif_frame,
    render_scene_frame,
    replay_commands,
)


class FakeClock:
    def __init__(self):
        self.now = 100.0

    def advance(self, seconds):
        self.now += seconds

    def __call__(self):
        return self.now


@pytest.fixture()
def clock():
    return FakeClock()


@pytest.fixture()
def cfg():
    return default_config()


@pytest.fixture()
def exact_cfg(cfg):
    return dataclasses.replace(cfg, teleop=TeleopOptions(calib_error_mm=0.0))


def make_session(cfg, clock, seed=(1234, 1)):
    return TeleopSession("t1", cfg, seed, clock)


def decode_frame(frame: dict) -> np.ndarray:
    raw = zlib.decompress(base64.b64decode(frame["data"]))
    assert len(raw) == frame["width"] * frame["height"]
    return np.frombuffer(raw, np.uint8).reshape(frame["height"], frame["width"])


def jog_until(session, x_mm, y_mm, yaw_deg):
    """Drive the commanded pose to a target through clamped jog steps."""
    opts = session.cfg.teleop
    for _ in range(200):
        cp = session.world.commanded_pose
        dx = x_mm - cp.x_mm
        dy = y_mm - cp.y_mm
        dyaw = normalize_angle_deg(yaw_deg - cp.yaw_deg)
        if max(abs(dx), abs(dy)) < 1e-9 and abs(dyaw) < 1e-9:
            return
        reply = session.handle(
            {"type": "jog", "dx_mm": dx, "dy_mm": dy, "dyaw_deg": dyaw}
        )
        assert reply["type"] == "state", reply
    raise AssertionError(f"no convergence onto ({x_mm}, {y_mm}, {yaw_deg})")


def nearest_site(session):
    brick = session.world.bricks[0]
    xs = [k[2] for k in brick.knob_positions()]
    ys = [k[3] for k in brick.knob_positions()]
    cx, cy = sum(xs) / len(xs), sum(ys) / len(ys)
    return session.world.nearest_pair(cx, cy)


class TestJog:
    def test_applied_jog_moves_commanded_pose(self, cfg, clock):
        session = make_session(cfg, clock)
        frame = session.handle({"type": "jog", "dx_mm": 2.0, "dy_mm": -1.0, "dyaw_deg": 3.0})
        assert frame["type"] == "state"
        assert frame["tool"] == {"x_mm": 2.0, "y_mm": -1.0, "z_mm": 39.6, "yaw_deg": 3.0}
        assert frame["held"] is False
        assert frame["trial_over"] is False

    def test_steps_clamped_and_logged_clamped(self, cfg, clock):
        session = make_session(cfg, clock)
        frame = session.handle({"type": "jog", "dx_mm": 50.0, "dy_mm": -50.0, "dyaw_deg": 99.0})
        assert frame["tool"]["x_mm"] == 5.0
        assert frame["tool"]["y_mm"] == -5.0
        assert frame["tool"]["yaw_deg"] == 10.0
        assert session.command_log[-1] == {
            "type": "jog", "dx_mm": 5.0, "dy_mm": -5.0, "dyaw_deg": 10.0,
        }

    def test_missing_fields_default_to_zero(self, cfg, clock):
        session = make_session(cfg, clock)
        frame = session.handle({"type": "jog", "dx_mm": 1.0})
        assert frame["tool"]["y_mm"] == 0.0
        assert frame["tool"]["yaw_deg"] == 0.0

    def test_workspace_violation_rejected_session_survives(self, cfg, clock):
        tight = dataclasses.replace(cfg, world=WorldConfig(workspace_x_mm=(-12.0, 12.0)))
        session = make_session(tight, clock)
        assert session.handle({"type": "jog", "dx_mm": 5.0})["type"] == "state"
        assert session.handle({"type": "jog", "dx_mm": 5.0})["type"] == "state"
        seq_before = session.seq
        reply = session.handle({"type": "jog", "dx_mm": 5.0})
        assert reply["type"] == "error"
        assert reply["seq"] == seq_before
        assert session.world.commanded_pose.x_mm == 10.0
        follow = session.handle({"type": "jog", "dx_mm": -5.0})
        assert follow["type"] == "state"
        assert follow["seq"] == seq_before + 1

    @pytest.mark.parametrize(
        "payload",
        [
            '{"type": "jog", "dx_mm": "big"}',
            '{"type": "jog", "dx_mm": NaN}',
            '{"type": "jog", "dy_mm": true}',
        ],
    )
    def test_bad_number_rejected(self, cfg, clock, payload):
        session = make_session(cfg, clock)
        reply = session.handle_raw(payload)
        assert reply["type"] == "error"
        assert "malformed" in reply["error"]
        assert session.world.commanded_pose.x_mm == 0.0


class TestProtocolErrors:
    def test_malformed_json(self, cfg, clock):
        reply = make_session(cfg, clock).handle_raw("{nope")
        assert reply["type"] == "error"
        assert "malformed" in reply["error"]

    def test_non_object_document(self, cfg, clock):
        reply = make_session(cfg, clock).handle_raw("[1, 2]")
        assert reply["type"] == "error"
        assert "JSON object" in reply["error"]

    def test_unknown_command_type(self, cfg, clock):
        reply = make_session(cfg, clock).handle({"type": "warp"})
        assert reply["type"] == "error"
        assert "unknown command type" in reply["error"]

    def test_unknown_view(self, cfg, clock):
        session = make_session(cfg, clock)
        reply = session.handle({"type": "set-view", "view": "top"})
        assert reply["type"] == "error"
        assert session.view == "eif"


class TestViews:
    def test_view_toggle_changes_frames(self, cfg, clock):
        session = make_session(cfg, clock)
        eif = decode_frame(session.state_frame()["frame"])
        frame = session.handle({"type": "set-view", "view": "third-person"})
        assert frame["view"] == "third-person"
        scene = decode_frame(frame["frame"])
        assert eif.shape == scene.shape
        assert not np.array_equal(eif, scene)
        assert set(VIEWS) == {"eif", "third-person"}

    def test_eif_frame_contents(self, cfg, clock):
        session = make_session(cfg, clock)
        img = render_eif_frame(session.world, session.cfg.noise)
        assert img.dtype == np.uint8
        assert img.shape == (480, 640)
        # aperture window and crosshair always present
        assert (img == 30).sum() > 100000
        assert (img == 255).sum() >= 30

    def test_scene_frame_shows_brick_and_tool(self, cfg, clock):
        session = make_session(cfg, clock)
        img = render_scene_frame(session.world)
        assert (img >= 90).sum() > 100
        assert img.max() == 255


class TestTrialLifecycle:
    def test_pick_outcome_reports_exact_hidden_error(self, cfg, clock):
        session = make_session(cfg, clock)
        site = nearest_site(session)
        jog_until(session, site.mid_x_mm, site.mid_y_mm, site.aligned_tool_yaw())
        clock.advance(2.5)
        frame = session.handle({"type": "attempt-pick"})
        assert frame["trial_over"] is True
        outcome = frame["outcome"]
        # commanded pose centered on the pair, so the true residual is
        # exactly the injected calibration error magnitude
        assert outcome["outcome"] == "collision"
        assert outcome["residual_mm"] == pytest.approx(1.0, abs=1e-6)
        assert outcome["elapsed_ms"] == pytest.approx(2500.0)

    def test_pick_success_without_calibration_error(self, exact_cfg, clock):
        session = make_session(exact_cfg, clock)
        site = nearest_site(session)
        jog_until(session, site.mid_x_mm, site.mid_y_mm, site.aligned_tool_yaw())
        frame = session.handle({"type": "attempt-pick"})
        outcome = frame["outcome"]
        assert outcome["outcome"] == "success"
        assert outcome["residual_mm"] == pytest.approx(0.0, abs=1e-6)
        assert outcome["brick_id"] == 1
        assert frame["held"] is True

    def test_miss_far_from_brick(self, cfg, clock):
        session = make_session(cfg, clock)
        frame = session.handle({"type": "attempt-pick"})
        # brick spawns ~100 mm out; the tool closes on air at the origin
        assert frame["outcome"]["outcome"] == "miss"
        assert frame["outcome"]["residual_mm"] > 50.0
        assert frame["outcome"]["brick_id"] == 1
        assert frame["held"] is False

    def test_trial_over_gates_commands(self, cfg, clock):
        session = make_session(cfg, clock)
        session.handle({"type": "attempt-pick"})
        for cmd in ({"type": "jog", "dx_mm": 1.0}, {"type": "attempt-pick"}):
            reply = session.handle(cmd)
            assert reply["type"] == "error"
            assert "trial ended" in reply["error"]
        # view switching stays allowed on a finished trial
        assert session.handle({"type": "set-view", "view": "third-person"})["type"] == "state"

    def test_reset_restarts_clock_but_not_seq(self, cfg, clock):
        session = make_session(cfg, clock)
        session.handle({"type": "jog", "dx_mm": 1.0})
        session.handle({"type": "attempt-pick"})
        before = session.seq
        clock.advance(9.0)
        frame = session.handle({"type": "reset"})
        assert frame["seq"] == before + 1
        assert frame["trial_over"] is False
        assert frame["clock_ms"] == 0.0
        assert frame["outcome"] is None
        assert frame["tool"]["x_mm"] == 0.0

    def test_reset_changes_brick_placement(self, cfg, clock):
        session = make_session(cfg, clock)
        first = tuple(session.world.bricks[0].knob_positions())
        session.handle({"type": "reset"})
        assert tuple(session.world.bricks[0].knob_positions()) != first

    def test_sessions_with_different_seeds_differ(self, cfg, clock):
        a = TeleopSession("a", cfg, (1234, 1), clock)
        b = TeleopSession("b", cfg, (1234, 2), clock)
        pa = (a.world.bricks[0].x_mm, a.world.bricks[0].y_mm)
        pb = (b.world.bricks[0].x_mm, b.world.bricks[0].y_mm)
        assert pa != pb


class TestSequencingAndDigest:
    def test_seq_strictly_increases_across_commands(self, cfg, clock):
        session = make_session(cfg, clock)
        seqs = [session.state_frame()["seq"]]
        for cmd in (
            {"type": "jog", "dx_mm": 1.0},
            {"type": "set-view", "view": "third-person"},
            {"type": "jog", "dy_mm": -1.0},
            {"type": "attempt-pick"},
            {"type": "reset"},
        ):
            frame = session.handle(cmd)
            assert frame["type"] == "state"
            seqs.append(frame["seq"])
        assert seqs == sorted(seqs)
        assert len(set(seqs)) == len(seqs)

    def test_digest_tracks_state_not_seq(self, cfg, clock):
        session = make_session(cfg, clock)
        a = session.state_frame()
        b = session.state_frame()
        assert a["seq"] != b["seq"]
        assert a["digest"] == b["digest"]
        c = session.handle({"type": "jog", "dx_mm": 1.0})
        assert c["digest"] != a["digest"]


class TestReplay:
    def test_replay_reproduces_outcomes_exactly(self, cfg, clock):
        session = make_session(cfg, clock, seed=(99, 0))
        site = nearest_site(session)
        session.handle({"type": "set-view", "view": "third-person"})
        jog_until(session, site.mid_x_mm, site.mid_y_mm, site.aligned_tool_yaw())
        clock.advance(1.0)
        session.handle({"type": "attempt-pick"})
        session.handle({"type": "reset"})
        session.handle({"type": "jog", "dx_mm": 2.0})
        session.handle({"type": "attempt-pick"})
        live = session.outcomes
        assert len(live) == 2

        replayed = replay_commands(cfg, (99, 0), session.command_log)
        assert len(replayed) == len(live)
        for ours, theirs in zip(live, replayed):
            assert theirs["outcome"] == ours["outcome"]
            assert theirs["residual_mm"] == ours["residual_mm"]
            assert theirs["residual_yaw_deg"] == ours["residual_yaw_deg"]
            assert theirs["brick_id"] == ours["brick_id"]

    def test_replay_rejects_corrupted_log(self, cfg):
        # a jog after attempt-pick can never appear in a genuine log
        bad = [{"type": "attempt-pick"}, {"type": "jog", "dx_mm": 1.0}]
        with pytest.raises(ValueError, match="failed on replay"):
            replay_commands(cfg, (99, 0), bad)


class TestService:
    @pytest.fixture()
    def client(self, cfg):
        return TestClient(create_app(cfg))

    def test_healthz(self, client):
        reply = client.get("/healthz")
        assert reply.status_code == 200
        assert reply.json() == {"status": "ok", "sessions": 0}

    def test_websocket_state_stream(self, client):
        with client.websocket_connect("/ws") as ws:
            first = ws.receive_json()
            assert first["type"] == "state"
            assert first["seq"] == 1
            assert first["view"] == "eif"
            assert first["session"] == "s1"
            img = decode_frame(first["frame"])
            assert img.shape == (480, 640)

            ws.send_text(json.dumps({"type": "jog", "dx_mm": 1.0}))
            second = ws.receive_json()
            assert second["seq"] == 2
            assert second["tool"]["x_mm"] == 1.0

            ws.send_text("{broken")
            err = ws.receive_json()
            assert err["type"] == "error"
            assert err["seq"] == 2

            ws.send_text(json.dumps({"type": "set-view", "view": "third-person"}))
            third = ws.receive_json()
            assert third["seq"] == 3
            assert third["view"] == "third-person"
        assert client.get("/healthz").json()["sessions"] == 1

    def test_each_connection_gets_own_session(self, client):
        with client.websocket_connect("/ws") as a:
            first_a = a.receive_json()
            with client.websocket_connect("/ws") as b:
                first_b = b.receive_json()
                assert first_a["session"] != first_b["session"]

    def test_session_log_endpoint(self, client):
        with client.websocket_connect("/ws") as ws:
            ws.receive_json()
            ws.send_text(json.dumps({"type": "jog", "dx_mm": 2.0}))
            ws.receive_json()
            ws.send_text(json.dumps({"type": "attempt-pick"}))
            ws.receive_json()
        log = client.get("/sessions/s1/log")
        assert log.status_code == 200
        doc = log.json()
        assert doc["session"] == "s1"
        assert doc["commands"] == [
            {"type": "jog", "dx_mm": 2.0, "dy_mm": 0.0, "dyaw_deg": 0.0},
            {"type": "attempt-pick"},
        ]
        assert len(doc["outcomes"]) == 1

    def test_unknown_session_log_404(self, client):
        assert client.get("/sessions/zz/log").status_code == 404
