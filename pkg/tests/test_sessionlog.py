"""Log files: atomic appends, prefix validity, gap detection, replay."""

import json
import os

import pytest

from msiengine.config import default_config
from msiengine.events import EventKind, EventRecord
from msiengine.machine import Status
from msiengine.observer import default_observer
from msiengine.sessionlog import (
    LogCorruption,
    LogWriter,
    log_fingerprint,
    make_header,
    read_log,
    replay_events,
    replay_log,
    write_log,
)
from msiengine.simulate import run_simulated_session


@pytest.fixture()
def pj_run(tmp_path):
    cfg = default_config("pj", 13)
    result = run_simulated_session(cfg, default_observer(4))
    path = tmp_path / "pj.mslog"
    write_log(str(path), make_header(cfg), result.events)
    return cfg, result, str(path)


def test_read_back_matches_written(pj_run):
    cfg, result, path = pj_run
    header, events = read_log(path)
    assert header["task"] == "pj" and header["seed"] == 13
    assert [e.to_dict() for e in events] == [e.to_dict() for e in result.events]


def test_replay_log_reproduces_live_state(pj_run):
    cfg, result, path = pj_run
    final = replay_log(path)
    assert final.snapshot_json() == result.session.snapshot_json()
    assert final.status is Status.DONE


def test_any_prefix_is_a_valid_log(pj_run):
    cfg, result, path = pj_run
    with open(path) as fh:
        lines = fh.read().splitlines()
    for cut in (1, 2, len(lines) // 2, len(lines) - 1):
        prefix_path = path + f".cut{cut}"
        with open(prefix_path, "w") as fh:
            fh.write("\n".join(lines[:cut]) + "\n")
        header, events = read_log(prefix_path)
        assert len(events) == cut - 1
        replay_events(header["config"], events)  # must not raise


def test_gap_detection_names_the_gap(pj_run, tmp_path):
    cfg, result, path = pj_run
    with open(path) as fh:
        lines = fh.read().splitlines()
    # drop the event with seq 16 so seq 17 follows 15
    events = [json.loads(line) for line in lines[1:]]
    kept = [e for e in events if e["seq"] != 16]
    corrupted = tmp_path / "gap.mslog"
    with open(corrupted, "w") as fh:
        fh.write(lines[0] + "\n")
        for e in kept:
            fh.write(json.dumps(e) + "\n")
    with pytest.raises(LogCorruption) as err:
        read_log(str(corrupted))
    assert "gap before 17" in str(err.value)


def test_empty_log_rejected(tmp_path):
    empty = tmp_path / "empty.mslog"
    empty.write_text("")
    with pytest.raises(LogCorruption):
        read_log(str(empty))


def test_header_only_log_is_idle_session(tmp_path):
    cfg = default_config("gng", 5)
    path = tmp_path / "fresh.mslog"
    with LogWriter(str(path), make_header(cfg)):
        pass
    session = replay_log(str(path))
    assert session.status is Status.IDLE
    assert not session.outcomes


def test_fingerprint_excludes_wallclock(pj_run, tmp_path):
    cfg, result, path = pj_run
    other = tmp_path / "other.mslog"
    header = make_header(cfg, created="2001-01-01T00:00:00+00:00")
    write_log(str(other), header, result.events)
    assert log_fingerprint(str(other)) == log_fingerprint(path)


def test_appends_are_line_atomic(tmp_path):
    cfg = default_config("gng", 5)
    path = tmp_path / "inc.mslog"
    writer = LogWriter(str(path), make_header(cfg))
    writer.append(EventRecord(1, 0, EventKind.PHASE_TRANSITION,
                              {"phase": "practice", "phase_index": 0}))
    # file readable while the writer is still open
    header, events = read_log(str(path))
    assert len(events) == 1
    writer.close()
