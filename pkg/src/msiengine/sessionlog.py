"""Append-only session logs (``*.mslog``): JSON lines, header first.

The header carries the normalized config (and its hash) plus the seed,
so a log is self-contained: replaying its events through a fresh task
machine reproduces the live final state. Appends are atomic per line;
any prefix of a valid log is itself a valid, shorter log.
"""

from __future__ import annotations

import datetime
import json
import os
from typing import IO, Any, Iterable, Optional

from .config import canonical_json
from .events import EventRecord


class LogCorruption(ValueError):
    pass


def make_header(config: dict, observer: Optional[dict] = None,
                created: Optional[str] = None) -> dict:
    from .config import config_hash

    header: dict[str, Any] = {
        "mslog": 1,
        "task": config["task"],
        "seed": config["seed"],
        "config_hash": config_hash(config),
        "config": config,
    }
    if observer is not None:
        header["observer"] = observer
    header["created"] = created or datetime.datetime.now(
        datetime.timezone.utc).isoformat()
    return header


class LogWriter:
    """One session's append-only log file."""

    def __init__(self, path: str, header: dict):
        self.path = path
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        self._fh: IO[str] = open(path, "w", encoding="utf-8")
        self._fh.write(canonical_json(header) + "\n")
        self._fh.flush()

    def append(self, event: EventRecord) -> None:
        self._fh.write(canonical_json(event.to_dict()) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "LogWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_log(path: str, header: dict, events: Iterable[EventRecord]) -> None:
    with LogWriter(path, header) as log:
        for event in events:
            log.append(event)


def read_log(path: str) -> tuple[dict, list[EventRecord]]:
    """Parse a log file; raises LogCorruption on bad lines or seq gaps."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        raise LogCorruption("empty log: missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise LogCorruption(f"unreadable header: {exc}") from exc
    if header.get("mslog") != 1:
        raise LogCorruption("not an mslog file (bad or missing format marker)")
    events: list[EventRecord] = []
    expected_seq = 1
    for i, line in enumerate(lines[1:], start=2):
        try:
            record = EventRecord.from_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise LogCorruption(f"unreadable event on line {i}: {exc}") from exc
        if record.seq != expected_seq:
            raise LogCorruption(f"gap before {record.seq} (expected {expected_seq})")
        expected_seq += 1
        events.append(record)
    return header, events


def replay_events(config: dict, events: Iterable[EventRecord]):
    """Feed events through a fresh machine; returns the final TaskSession."""
    from .machine import TaskSession

    session = TaskSession(config)
    for event in events:
        session.submit_event(event)
    return session


def replay_log(path: str):
    header, events = read_log(path)
    return replay_events(header["config"], events)


def strip_wallclock(header: dict) -> dict:
    out = dict(header)
    out.pop("created", None)
    return out


def log_fingerprint(path: str) -> str:
    """Canonical digest of a log minus wall-clock header fields."""
    import hashlib

    header, events = read_log(path)
    payload = canonical_json(strip_wallclock(header)) + "\n" + "\n".join(
        canonical_json(e.to_dict()) for e in events)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
