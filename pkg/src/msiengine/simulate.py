"""Headless session runs on a virtual clock.

The simulator plays both sides of a session: it drives the task machine
action by action and answers as a simulated observer, stamping every
event with virtual nanoseconds. No wall-clock time passes; a full
session runs in well under a second and the resulting event stream is
byte-reproducible for a given (config, observer, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from .events import EventKind, EventRecord
from .machine import (
    DoneAction,
    PhaseEnterAction,
    PresentAction,
    PromptAction,
    QuestionnaireAction,
    RestAction,
    TaskSession,
)
from .observer import SimObserver, answers_for_questionnaire, sim_respond
from .sequencing import TrialSpec

REFRESH_PERIOD_MS = 1000.0 / 60.0

MS = 1_000_000  # nanoseconds per millisecond


def synthetic_frame_intervals(span_ms: float) -> list[float]:
    """Steady fake frame cadence covering a span: floor(span/period) frames."""
    count = int(span_ms * 60 // 1000)
    return [REFRESH_PERIOD_MS] * count


@dataclass
class SimulationResult:
    session: TaskSession
    events: list[EventRecord]
    header: dict[str, Any]
    end_ns: int
    latency_total_ms: float

    def log_lines(self) -> list[str]:
        from .config import canonical_json

        lines = [canonical_json(self.header)]
        lines += [canonical_json(e.to_dict()) for e in self.events]
        return lines


def run_simulated_session(config: dict, observer: SimObserver,
                          max_events: int = 2_000_000) -> SimulationResult:
    """Drive one complete session; returns the machine, events, and header."""
    from .config import config_hash
    from .observer import observer_to_dict

    session = TaskSession(config)
    observer = observer.fork()
    events: list[EventRecord] = []
    seq = 0
    t_ns = 0
    latency_total = 0.0

    def emit(kind: EventKind, payload: dict, t: int,
             t_client: Optional[int] = None) -> EventRecord:
        nonlocal seq
        seq += 1
        record = EventRecord(seq=seq, t_ns=t, kind=kind, payload=payload,
                             t_client_ns=t_client)
        events.append(record)
        session.submit_event(record)
        return record

    while not session.done:
        if len(events) > max_events:
            raise RuntimeError("simulation did not terminate (event cap reached)")
        action = session.next_action()

        if isinstance(action, PhaseEnterAction):
            emit(EventKind.PHASE_TRANSITION,
                 {"phase": action.name.value, "phase_index": action.phase_index},
                 t_ns)
            continue

        if isinstance(action, PromptAction):
            emit(EventKind.PROMPT_SHOWN, {"text": action.prompt.text}, t_ns,
                 t_client=t_ns)
            t_ns += action.prompt.display_ms * MS
            emit(EventKind.PROMPT_CLEARED, {}, t_ns, t_client=t_ns)
            t_ns += action.prompt.post_gap_ms * MS
            continue

        if isinstance(action, RestAction):
            t_ns += action.ms * MS
            emit(EventKind.MARKER, {"name": "rest_complete"}, t_ns)
            continue

        if isinstance(action, QuestionnaireAction):
            answers = answers_for_questionnaire(observer, action.kind)
            emit(EventKind.QUESTIONNAIRE,
                 {"kind": action.kind, "answers": answers}, t_ns, t_client=t_ns)
            continue

        if isinstance(action, PresentAction):
            trial = action.trial
            emit(EventKind.PRESENT_COMMANDED, _present_payload(session, trial), t_ns)
            latency_ms = observer.draw_latency_ms()
            latency_total += latency_ms
            t0 = t_ns + int(latency_ms * MS)
            emit(EventKind.STIMULUS_SHOWN, {"onset_ns": t0}, t0, t_client=t0)
            if all(s.intensity == 0.0 for s in trial.stimuli):
                # Stimulus-free trial window (tactile Go): keep it observable.
                emit(EventKind.MARKER, {"name": "trial_window"}, t0, t_client=t0)

            open_ms = trial.timing.response_open_ms
            close_ms = trial.timing.response_close_ms
            decision = sim_respond(observer, trial)
            resolved = False
            if decision.button is not None and decision.rt_ms is not None:
                press_ms = open_ms + decision.rt_ms
                if press_ms <= close_ms:
                    t_press = t0 + int(press_ms * MS)
                    emit(EventKind.RESPONSE,
                         {"button": decision.button.value, "t_press_ns": t_press},
                         t_press, t_client=t_press)
                    resolved = True
            if not resolved:
                t_close = t0 + close_ms * MS
                emit(EventKind.MARKER, {"name": "window_closed"}, t_close)
                if decision.button is not None and decision.rt_ms is not None:
                    t_press = t0 + int((open_ms + decision.rt_ms) * MS)
                    emit(EventKind.RESPONSE,
                         {"button": decision.button.value, "t_press_ns": t_press},
                         t_press, t_client=t_press)

            slot_ms = trial.timing.slot_ms
            intervals = synthetic_frame_intervals(slot_ms)
            t_end = t0 + slot_ms * MS
            emit(EventKind.FRAME_INTERVAL, {"intervals_ms": intervals}, t_end,
                 t_client=t_end)
            t_ns = t_end
            continue

        if isinstance(action, DoneAction):  # pragma: no cover - loop guard exits first
            break
        raise RuntimeError(f"unhandled action {action!r}")

    header = {
        "mslog": 1,
        "task": config["task"],
        "seed": config["seed"],
        "config_hash": config_hash(config),
        "config": config,
        "observer": observer_to_dict(observer),
    }
    return SimulationResult(session=session, events=events, header=header,
                            end_ns=t_ns, latency_total_ms=latency_total)


def _present_payload(session: TaskSession, trial: TrialSpec) -> dict:
    return {
        "phase_index": session.phase_i,
        "block_index": session.block_i,
        "trial_index": trial.trial_index,
        "task": trial.task.value,
    }
