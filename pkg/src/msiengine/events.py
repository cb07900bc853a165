"""Timestamped event records: the single source of truth for a session.

Every state change in a task session is driven by one of these records;
replaying a session's ordered records from the idle state reproduces
the live final state exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Optional


class EventKind(str, Enum):
    PRESENT_COMMANDED = "present_commanded"
    STIMULUS_SHOWN = "stimulus_shown"
    RESPONSE = "response"
    FRAME_INTERVAL = "frame_interval"
    PROMPT_SHOWN = "prompt_shown"
    PROMPT_CLEARED = "prompt_cleared"
    PHASE_TRANSITION = "phase_transition"
    QUESTIONNAIRE = "questionnaire"
    PROTOCOL_VIOLATION = "protocol_violation"
    MARKER = "marker"


@dataclass(frozen=True)
class EventRecord:
    seq: int
    t_ns: int  # server monotonic nanoseconds at receipt (virtual ns in simulation)
    kind: EventKind
    payload: Mapping[str, Any]
    t_client_ns: Optional[int] = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "seq": self.seq,
            "t_ns": self.t_ns,
            "kind": self.kind.value,
            "payload": dict(self.payload),
        }
        if self.t_client_ns is not None:
            out["t_client_ns"] = self.t_client_ns
        return out

    @staticmethod
    def from_dict(d: Mapping[str, Any]) -> "EventRecord":
        return EventRecord(
            seq=d["seq"],
            t_ns=d["t_ns"],
            kind=EventKind(d["kind"]),
            payload=dict(d["payload"]),
            t_client_ns=d.get("t_client_ns"),
        )
