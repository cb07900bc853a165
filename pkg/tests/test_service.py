"""Session service: loopback wire sessions, refusals, resume, golden."""

import json
import os

import pytest
from starlette.testclient import TestClient

from msiengine.config import default_config, load_config
from msiengine.events import EventKind
from msiengine.observer import default_observer, load_observer
from msiengine.service import (
    SessionHost,
    SimulatorWireClient,
    create_app,
    run_loopback_session,
)
from msiengine.sessionlog import replay_events
from msiengine.wire import PROTOCOL_VERSION, WireMessage, decode_message, encode_message

HERE = os.path.dirname(__file__)
CONFIGS = os.path.join(HERE, os.pardir, "configs")
DATA = os.path.join(HERE, "data")

TIME_FIELDS = {"t0", "t1", "t2", "t_ns", "onset_ns", "t_press_ns", "t_end_ns"}


def strip_times(message: dict) -> dict:
    out = dict(message)
    out["payload"] = {k: v for k, v in message["payload"].items()
                      if k not in TIME_FIELDS}
    return out


def small_gng_config():
    return load_config(os.path.join(CONFIGS, "golden_gng.json"))


def test_loopback_full_gng_session_completes(tmp_path):
    cfg = small_gng_config()
    host, client = run_loopback_session(cfg, default_observer(31337),
                                        log_path=str(tmp_path / "wire.mslog"))
    assert host.finished
    assert len(host.machine.outcomes) == 35
    assert not host.machine.violations
    # the wire log replays to the live state
    replayed = replay_events(cfg, host.events)
    assert replayed.snapshot_json() == host.machine.snapshot_json()


def test_no_second_present_before_resolution():
    cfg = small_gng_config()
    host, _ = run_loopback_session(cfg, default_observer(31337))
    open_trial = False
    for event in host.events:
        kind = event.kind.value
        if kind == "present_commanded":
            assert not open_trial, "present issued while a trial was unresolved"
            open_trial = True
        elif kind == "response" and open_trial:
            open_trial = False
        elif kind == "marker" and event.payload.get("name") == "window_closed":
            open_trial = False


def test_version_mismatch_cleanly_refused():
    cfg = small_gng_config()
    host = SessionHost(cfg)
    app = create_app(host)
    with TestClient(app) as tc:
        with tc.websocket_connect("/session") as ws:
            ws.send_text(encode_message(
                WireMessage("hello", 1, {"version": PROTOCOL_VERSION + 1})))
            reply = decode_message(ws.receive_text())
            assert reply.type == "refuse"
            assert "version mismatch" in reply.payload["reason"]
    assert host.protocol_error


def test_second_client_rejected():
    cfg = small_gng_config()
    host = SessionHost(cfg)
    app = create_app(host)
    with TestClient(app) as tc:
        with tc.websocket_connect("/session") as first:
            first.send_text(encode_message(
                WireMessage("hello", 1, {"version": PROTOCOL_VERSION})))
            welcome = decode_message(first.receive_text())
            assert welcome.type == "welcome"
            with tc.websocket_connect("/session") as second:
                reply = decode_message(second.receive_text())
                assert reply.type == "refuse"
                assert "already has a client" in reply.payload["reason"]


def test_disconnect_and_resume_completes_identically(tmp_path):
    cfg = small_gng_config()
    uninterrupted, _ = run_loopback_session(cfg, default_observer(31337))
    # Force a disconnect after two blocks' worth of presents (2 x 5 trials).
    interrupted, client = run_loopback_session(
        cfg, default_observer(31337), disconnect_after_presents=10)
    assert interrupted.finished
    assert len(interrupted.machine.outcomes) == len(uninterrupted.machine.outcomes)
    seq_a = [(o.block_name, o.trial_index)
             for o in uninterrupted.machine.outcomes]
    seq_b = [(o.block_name, o.trial_index) for o in interrupted.machine.outcomes]
    assert seq_a == seq_b  # identical remaining plan after resume
    markers = [e.payload.get("name") for e in interrupted.events
               if e.kind is EventKind.MARKER]
    assert "session_suspended" in markers and "session_resumed" in markers
    # resume produced a welcome with resumed=true on the wire
    replayed = replay_events(cfg, interrupted.events)
    assert replayed.snapshot_json() == interrupted.machine.snapshot_json()


def test_refuse_unknown_session_id():
    cfg = small_gng_config()
    host = SessionHost(cfg)
    app = create_app(host)
    with TestClient(app) as tc:
        with tc.websocket_connect("/session") as ws:
            ws.send_text(encode_message(WireMessage(
                "hello", 1, {"version": PROTOCOL_VERSION,
                             "session_id": "bogus"})))
            reply = decode_message(ws.receive_text())
            assert reply.type == "refuse"


@pytest.mark.parametrize("name, config_file, observer_seed", [
    ("golden_gng_transcript.jsonl", "golden_gng.json", 31337),
    ("golden_pj_transcript.jsonl", "golden_pj.json", 31337),
])
def test_golden_transcript_conformance(name, config_file, observer_seed):
    """A fresh loopback run must match the recorded golden transcript
    message for message, excluding timestamps."""
    golden_path = os.path.join(DATA, name)
    with open(golden_path) as fh:
        golden = [json.loads(line) for line in fh if line.strip()]
    for message in golden:
        decode_message(json.dumps(message))  # golden decodes cleanly
    cfg = load_config(os.path.join(CONFIGS, config_file))
    observer = load_observer(os.path.join(CONFIGS, "observer.default.json"))
    assert observer.seed == observer_seed
    _, client = run_loopback_session(cfg, observer)
    fresh = [strip_times(m) for m in client.transcript]
    expected = [strip_times(m) for m in golden]
    assert fresh == expected
