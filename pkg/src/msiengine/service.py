"""Live session service: WebSocket endpoint binding a task machine to
one runner client, with append-only logging and clock-offset estimation.

One session loop owns its machine and log exclusively. The client
renders what the server commands and reports what actually happened
(actual onsets, presses, frame intervals); every report becomes an
event record, so a disconnected session resumes from its own log-backed
state and replays identically afterwards.

The protocol is turn-based per trial: after a ``present`` command the
client sends ``shown``, zero or more ``response`` messages, and ends
its turn with a terminal ``frame`` batch at the end of the trial slot.
The server injects the response-window-closed marker only if the trial
is still unresolved at that point, which keeps scaled and virtual-time
sessions free of races.
"""

from __future__ import annotations

import asyncio
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .config import config_hash
from .events import EventKind, EventRecord
from .machine import (
    PhaseEnterAction,
    PresentAction,
    PromptAction,
    QuestionnaireAction,
    RestAction,
    TaskSession,
)
from .observer import SimObserver, answers_for_questionnaire, sim_respond
from .sessionlog import LogWriter, make_header
from .sequencing import trial_from_dict, trial_to_dict
from .simulate import synthetic_frame_intervals
from .wire import (
    PROTOCOL_VERSION,
    WireError,
    WireMessage,
    clock_offset,
    decode_message,
    encode_message,
)

MS = 1_000_000

EXIT_COMPLETE = 0
EXIT_SUSPENDED = 2
EXIT_PROTOCOL_ERROR = 3

PING_BURST = 9
RECV_TIMEOUT_S = 30.0


class SessionHost:
    """Owns one session: machine, log, sequence counter, lifecycle flags."""

    def __init__(self, config: dict, log_path: Optional[str] = None,
                 observer_doc: Optional[dict] = None):
        self.config = config
        self.machine = TaskSession(config)
        self.session_id = f"{config['task']}-{config['seed']}-{config_hash(config)}"
        self.time_scale = float(config["timing"]["time_scale"])
        self.seq = 0
        self.log: Optional[LogWriter] = None
        if log_path:
            self.log = LogWriter(log_path, make_header(config, observer_doc))
        self.events: list[EventRecord] = []
        self.started = False
        self.finished = False
        self.protocol_error = False
        self.suspended_since: Optional[float] = None
        self.active_connection = False
        self.client_offset_ns: Optional[float] = None

    def emit(self, kind: EventKind, payload: dict,
             t_client_ns: Optional[int] = None) -> EventRecord:
        self.seq += 1
        record = EventRecord(seq=self.seq, t_ns=time.monotonic_ns(), kind=kind,
                             payload=payload, t_client_ns=t_client_ns)
        self.events.append(record)
        if self.log is not None:
            self.log.append(record)
        self.machine.submit_event(record)
        return record

    def close(self) -> None:
        if self.log is not None:
            self.log.close()
            self.log = None

    def scaled(self, ms: float) -> float:
        return ms * self.time_scale / 1000.0


class _Connection:
    """Framed message I/O for one accepted websocket."""

    def __init__(self, ws: WebSocket):
        self.ws = ws
        self.out_seq = 0

    async def send(self, type_: str, payload: dict) -> None:
        self.out_seq += 1
        await self.ws.send_text(encode_message(
            WireMessage(type=type_, seq=self.out_seq, payload=payload)))

    async def recv(self, timeout_s: float = RECV_TIMEOUT_S) -> WireMessage:
        text = await asyncio.wait_for(self.ws.receive_text(), timeout=timeout_s)
        return decode_message(text)


async def _handshake(host: SessionHost, conn: _Connection) -> bool:
    hello = await conn.recv()
    if hello.type != "hello":
        await conn.send("refuse", {"reason": f"expected hello, got {hello.type}"})
        host.protocol_error = True
        return False
    if hello.payload.get("version") != PROTOCOL_VERSION:
        await conn.send("refuse", {
            "reason": f"protocol version mismatch: server {PROTOCOL_VERSION}, "
                      f"client {hello.payload.get('version')!r}"})
        host.protocol_error = True
        return False
    claimed = hello.payload.get("session_id")
    if claimed is not None and claimed != host.session_id:
        await conn.send("refuse", {"reason": "unknown session id"})
        return False
    resumed = host.started
    await conn.send("welcome", {"session_id": host.session_id,
                                "resumed": resumed,
                                "protocol": PROTOCOL_VERSION})
    await conn.send("config", {
        "task": host.config["task"],
        "seed": host.config["seed"],
        "config_hash": config_hash(host.config),
        "time_scale": host.time_scale,
        "buttons": host.config["buttons"],
    })
    return True


async def _ping_burst(host: SessionHost, conn: _Connection) -> None:
    samples = []
    for _ in range(PING_BURST):
        t0 = time.monotonic_ns()
        await conn.send("ping", {"t0": t0})
        msg = await conn.recv()
        t3 = time.monotonic_ns()
        if msg.type != "pong":
            raise WireError(f"expected pong, got {msg.type}")
        samples.append((msg.payload["t0"], msg.payload["t1"],
                        msg.payload["t2"], t3))
    host.client_offset_ns = clock_offset(samples)
    host.emit(EventKind.MARKER, {"name": "clock_offset",
                                 "offset_ns": host.client_offset_ns})


async def _drive_session(host: SessionHost, conn: _Connection) -> None:
    machine = host.machine
    while not machine.done:
        action = machine.next_action()

        if isinstance(action, PhaseEnterAction):
            host.emit(EventKind.PHASE_TRANSITION,
                      {"phase": action.name.value,
                       "phase_index": action.phase_index})
            await conn.send("phase", {"name": action.name.value,
                                      "phase_index": action.phase_index})
            continue

        if isinstance(action, PromptAction):
            await conn.send("prompt", action.describe())
            while True:
                msg = await conn.recv()
                if msg.type == "prompt_shown":
                    host.emit(EventKind.PROMPT_SHOWN,
                              {"text": action.prompt.text},
                              t_client_ns=msg.payload.get("t_ns"))
                elif msg.type == "prompt_cleared":
                    host.emit(EventKind.PROMPT_CLEARED, {},
                              t_client_ns=msg.payload.get("t_ns"))
                    break
                elif msg.type == "frame":
                    host.emit(EventKind.FRAME_INTERVAL, dict(msg.payload))
                else:
                    host.emit(EventKind.PROTOCOL_VIOLATION,
                              {"reason": f"unexpected {msg.type} during prompt"})
            if action.prompt.post_gap_ms:
                await asyncio.sleep(host.scaled(action.prompt.post_gap_ms))
            continue

        if isinstance(action, RestAction):
            await conn.send("rest", {"ms": action.ms})
            await asyncio.sleep(host.scaled(action.ms))
            host.emit(EventKind.MARKER, {"name": "rest_complete"})
            continue

        if isinstance(action, QuestionnaireAction):
            await conn.send("question", {"kind": action.kind})
            while True:
                msg = await conn.recv()
                if msg.type == "questionnaire":
                    host.emit(EventKind.QUESTIONNAIRE,
                              {"kind": msg.payload.get("kind"),
                               "answers": msg.payload.get("answers", [])},
                              t_client_ns=msg.payload.get("t_ns"))
                    break
                host.emit(EventKind.PROTOCOL_VIOLATION,
                          {"reason": f"unexpected {msg.type} during questionnaire"})
            continue

        if isinstance(action, PresentAction):
            trial = action.trial
            host.emit(EventKind.PRESENT_COMMANDED, {
                "phase_index": machine.phase_i,
                "block_index": machine.block_i,
                "trial_index": trial.trial_index,
                "task": trial.task.value,
            })
            await conn.send("present", {
                "phase_index": machine.phase_i,
                "block_index": machine.block_i,
                "trial_index": trial.trial_index,
                "trial": trial_to_dict(trial),
            })
            slot_s = host.scaled(trial.timing.slot_ms)
            timeout = max(RECV_TIMEOUT_S, slot_s * 2 + 5.0)
            while True:
                msg = await conn.recv(timeout)
                if msg.type == "shown":
                    host.emit(EventKind.STIMULUS_SHOWN,
                              {"onset_ns": msg.payload["onset_ns"]},
                              t_client_ns=msg.payload.get("onset_ns"))
                    if all(s.intensity == 0.0 for s in trial.stimuli):
                        host.emit(EventKind.MARKER, {"name": "trial_window"})
                elif msg.type == "response":
                    host.emit(EventKind.RESPONSE,
                              {"button": msg.payload.get("button"),
                               "t_press_ns": msg.payload.get("t_press_ns")},
                              t_client_ns=msg.payload.get("t_press_ns"))
                elif msg.type == "frame":
                    if machine.awaiting == "resolution":
                        host.emit(EventKind.MARKER, {"name": "window_closed"})
                    host.emit(EventKind.FRAME_INTERVAL,
                              {"intervals_ms": msg.payload.get("intervals_ms", [])},
                              t_client_ns=msg.payload.get("t_end_ns"))
                    break
                else:
                    host.emit(EventKind.PROTOCOL_VIOLATION,
                              {"reason": f"unexpected {msg.type} during trial"})
            continue

        raise WireError(f"unhandled action {action!r}")

    await conn.send("done", {"summary": {
        "outcomes": len(machine.outcomes),
        "calibration": len(machine.calibration_outcomes),
        "violations": len(machine.violations),
    }})
    host.finished = True
    host.close()


def _mark_suspended(host: SessionHost) -> None:
    if not host.finished:
        host.emit(EventKind.MARKER, {"name": "session_suspended"})
        host.suspended_since = time.monotonic()


def create_app(host: SessionHost) -> FastAPI:
    app = FastAPI()
    app.state.host = host

    @app.websocket("/session")
    async def session_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        conn = _Connection(ws)
        if host.active_connection:
            await conn.send("refuse", {"reason": "session already has a client"})
            await ws.close()
            return
        if host.finished:
            await conn.send("refuse", {"reason": "session already complete"})
            await ws.close()
            return
        host.active_connection = True
        try:
            ok = await _handshake(host, conn)
            if not ok:
                await ws.close()
                return
            resumed = host.started
            if resumed:
                host.emit(EventKind.MARKER, {"name": "session_resumed"})
                host.suspended_since = None
            await _ping_burst(host, conn)
            host.started = True
            await _drive_session(host, conn)
            await ws.close()
        except WireError as exc:
            host.protocol_error = True
            host.emit(EventKind.PROTOCOL_VIOLATION, {"reason": str(exc)})
            try:
                await conn.send("error", {"reason": str(exc)})
                await ws.close()
            except Exception:
                pass
        except asyncio.CancelledError:
            # In-process transports cancel the handler task when the client
            # side goes away; record the suspension before propagating.
            _mark_suspended(host)
            raise
        except (WebSocketDisconnect, asyncio.TimeoutError, Exception):
            # Dropped sockets surface as different exceptions depending on
            # transport (disconnect on recv, closed-resource on send); all
            # of them suspend the session for a later resume.
            _mark_suspended(host)
        finally:
            host.active_connection = False

    return app


def serve_session(config: dict, endpoint: str = "127.0.0.1:8765",
                  log_path: Optional[str] = None,
                  resume_wait_s: float = 10.0,
                  announce: Optional[Callable[[int], None]] = None) -> int:
    """Serve one live session until it completes; returns the exit code."""
    import uvicorn

    host_addr, _, port_text = endpoint.partition(":")
    port = int(port_text or "8765")
    host = SessionHost(config, log_path)
    app = create_app(host)

    async def _run() -> int:
        server = uvicorn.Server(uvicorn.Config(
            app, host=host_addr or "127.0.0.1", port=port, log_level="warning",
            lifespan="off", ws_ping_interval=None, ws_ping_timeout=None))
        task = asyncio.create_task(server.serve())
        while not server.started:
            if task.done():
                task.result()
                return EXIT_PROTOCOL_ERROR
            await asyncio.sleep(0.01)
        bound = server.servers[0].sockets[0].getsockname()[1]
        if announce is not None:
            announce(bound)
        else:
            print(f"LISTENING {bound}", flush=True)
        try:
            while True:
                await asyncio.sleep(0.05)
                if host.finished:
                    return EXIT_COMPLETE
                if host.protocol_error and not host.active_connection:
                    return EXIT_PROTOCOL_ERROR
                if (host.suspended_since is not None
                        and not host.active_connection
                        and time.monotonic() - host.suspended_since > resume_wait_s):
                    return EXIT_SUSPENDED
        finally:
            server.should_exit = True
            await task
            host.close()

    return asyncio.run(_run())


# ---------------------------------------------------------------------------
# Loopback simulator speaking the wire protocol

class SimulatedDisconnect(Exception):
    """Raised by the wire client to force a mid-session disconnect."""


class SimulatorWireClient:
    """Protocol-complete client whose decisions come from a SimObserver.

    Transport-agnostic: drive it with ``send_text`` / ``receive_text``
    callables. Keeps a virtual client clock for every reported
    timestamp and records the full outgoing transcript.
    """

    def __init__(self, observer: SimObserver,
                 disconnect_after_presents: Optional[int] = None):
        self.observer = observer.fork()
        self.vclock_ns = 0
        self.seq = 0
        self.transcript: list[dict] = []
        self.presents_handled = 0
        self.disconnect_after_presents = disconnect_after_presents
        self.session_id: Optional[str] = None
        self.done_payload: Optional[dict] = None

    def _send(self, send_text: Callable[[str], None], type_: str,
              payload: dict) -> None:
        self.seq += 1
        message = WireMessage(type=type_, seq=self.seq, payload=payload)
        self.transcript.append(message.to_dict())
        send_text(encode_message(message))

    def run(self, send_text: Callable[[str], None],
            recv_text: Callable[[], str], resume: bool = False) -> str:
        """Run until done or forced disconnect; returns 'done' or 'refused'."""
        hello: dict[str, Any] = {"version": PROTOCOL_VERSION, "client": "loopback-sim"}
        if resume and self.session_id:
            hello["session_id"] = self.session_id
        self._send(send_text, "hello", hello)
        while True:
            msg = decode_message(recv_text())
            kind = msg.type
            if kind == "welcome":
                self.session_id = msg.payload.get("session_id")
            elif kind == "refuse":
                return "refused"
            elif kind == "config":
                pass
            elif kind == "ping":
                self._send(send_text, "pong", {"t0": msg.payload["t0"],
                                               "t1": self.vclock_ns,
                                               "t2": self.vclock_ns})
            elif kind == "phase":
                pass
            elif kind == "prompt":
                self._send(send_text, "prompt_shown", {"t_ns": self.vclock_ns})
                self.vclock_ns += int(msg.payload.get("display_ms", 0)) * MS
                self._send(send_text, "prompt_cleared", {"t_ns": self.vclock_ns})
                self.vclock_ns += int(msg.payload.get("post_gap_ms", 0)) * MS
            elif kind == "rest":
                self.vclock_ns += int(msg.payload["ms"]) * MS
            elif kind == "present":
                self._handle_present(send_text, msg.payload)
            elif kind == "question":
                answers = answers_for_questionnaire(self.observer,
                                                    msg.payload["kind"])
                self._send(send_text, "questionnaire",
                           {"kind": msg.payload["kind"], "answers": answers,
                            "t_ns": self.vclock_ns})
            elif kind == "done":
                self.done_payload = dict(msg.payload)
                return "done"
            elif kind == "error":
                raise WireError(f"server error: {msg.payload.get('reason')}")
            else:
                raise WireError(f"unexpected server message {kind!r}")

    def _handle_present(self, send_text: Callable[[str], None],
                        payload: dict) -> None:
        trial = trial_from_dict(payload["trial"])
        latency_ms = self.observer.draw_latency_ms()
        t0 = self.vclock_ns + int(latency_ms * MS)
        self._send(send_text, "shown", {"onset_ns": t0,
                                        "block_index": payload["block_index"],
                                        "trial_index": payload["trial_index"]})
        decision = sim_respond(self.observer, trial)
        open_ms = trial.timing.response_open_ms
        if decision.button is not None and decision.rt_ms is not None:
            t_press = t0 + int((open_ms + decision.rt_ms) * MS)
            self._send(send_text, "response",
                       {"button": decision.button.value, "t_press_ns": t_press})
        slot_ms = trial.timing.slot_ms
        self.vclock_ns = t0 + slot_ms * MS
        self._send(send_text, "frame",
                   {"intervals_ms": synthetic_frame_intervals(slot_ms),
                    "t_end_ns": self.vclock_ns})
        self.presents_handled += 1
        if (self.disconnect_after_presents is not None
                and self.presents_handled >= self.disconnect_after_presents):
            self.disconnect_after_presents = None
            raise SimulatedDisconnect()


def run_loopback_session(config: dict, observer: SimObserver,
                         log_path: Optional[str] = None,
                         disconnect_after_presents: Optional[int] = None
                         ) -> tuple[SessionHost, SimulatorWireClient]:
    """Full wire-protocol session against the real app, in process."""
    from starlette.testclient import TestClient

    host = SessionHost(config, log_path)
    app = create_app(host)
    client = SimulatorWireClient(observer,
                                 disconnect_after_presents=disconnect_after_presents)
    with TestClient(app) as tc:
        try:
            with tc.websocket_connect("/session") as ws:
                client.run(ws.send_text, lambda: ws.receive_text())
        except SimulatedDisconnect:
            pass
        if not host.finished:
            # Wait for the server side to notice the disconnect, then resume.
            deadline = time.monotonic() + 5.0
            while host.active_connection and time.monotonic() < deadline:
                time.sleep(0.01)
            with tc.websocket_connect("/session") as ws:
                client.run(ws.send_text, lambda: ws.receive_text(), resume=True)
    return host, client
