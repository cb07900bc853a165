"""Wire protocol for live sessions: one JSON text frame per message.

Messages are newline-free single-line JSON objects carrying a protocol
version, a type tag, a per-sender sequence number, and a payload.
Decoding is strict: unknown types, malformed frames, and truncated
frames are rejected with the error position, never half-parsed.

Clock offsets between runner and server come from an NTP-style ping
burst; the median over pings of ((t1 - t0) + (t2 - t3)) / 2 maps client
monotonic timestamps onto the server's timeline while tolerating an
outlier ping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

PROTOCOL_VERSION = 1

SERVER_TYPES = frozenset({
    "welcome", "refuse", "config", "ping", "present", "prompt", "rest",
    "phase", "question", "done", "error",
})
CLIENT_TYPES = frozenset({
    "hello", "pong", "shown", "response", "frame", "prompt_shown",
    "prompt_cleared", "questionnaire",
})
ALL_TYPES = SERVER_TYPES | CLIENT_TYPES


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class WireMessage:
    type: str
    seq: int
    payload: Mapping[str, Any] = field(default_factory=dict)
    v: int = PROTOCOL_VERSION

    def to_dict(self) -> dict:
        return {"v": self.v, "type": self.type, "seq": self.seq,
                "payload": dict(self.payload)}


def encode_message(message: WireMessage) -> str:
    if message.type not in ALL_TYPES:
        raise WireError(f"unknown message type {message.type!r}")
    text = json.dumps(message.to_dict(), sort_keys=True, separators=(",", ":"),
                      allow_nan=False)
    if "\n" in text:
        raise WireError("encoded frame must be newline-free")
    return text


def decode_message(frame: str | bytes) -> WireMessage:
    if isinstance(frame, bytes):
        try:
            frame = frame.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WireError(f"frame is not valid UTF-8 at byte {exc.start}") from exc
    try:
        data = json.loads(frame)
    except json.JSONDecodeError as exc:
        raise WireError(f"malformed frame at position {exc.pos}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise WireError("frame must decode to an object")
    for key in ("v", "type", "seq", "payload"):
        if key not in data:
            raise WireError(f"frame missing {key!r} field")
    if data["v"] != PROTOCOL_VERSION:
        raise WireError(f"unsupported protocol version {data['v']!r}")
    if data["type"] not in ALL_TYPES:
        raise WireError(f"unknown message type {data['type']!r}")
    if not isinstance(data["seq"], int):
        raise WireError("seq must be an integer")
    if not isinstance(data["payload"], dict):
        raise WireError("payload must be an object")
    return WireMessage(type=data["type"], seq=data["seq"],
                       payload=data["payload"], v=data["v"])


def clock_offset(pings: Sequence[tuple[float, float, float, float]]) -> float:
    """Median client-minus-server clock offset over an NTP-style ping burst."""
    if len(pings) < 3:
        raise WireError("clock offset needs at least three pings")
    offsets = sorted(((t1 - t0) + (t2 - t3)) / 2.0 for t0, t1, t2, t3 in pings)
    n = len(offsets)
    mid = n // 2
    if n % 2 == 1:
        return offsets[mid]
    return (offsets[mid - 1] + offsets[mid]) / 2.0
