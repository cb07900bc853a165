"""CLI: validate, simulate determinism, analyze, report, live serve."""

import json
import os
import re
import subprocess
import sys
import threading

import pytest

from msiengine.cli import main
from msiengine.sessionlog import log_fingerprint

HERE = os.path.dirname(__file__)
CONFIGS = os.path.join(HERE, os.pardir, "configs")


def run_cli(*argv):
    return main(list(argv))


def test_validate_good_config(capsys):
    assert run_cli("validate", os.path.join(CONFIGS, "gng.json")) == 0
    assert "valid" in capsys.readouterr().out


def test_validate_bad_config_names_the_rule(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"task": "gng", "seed": 1,
                               "blocks": {"gng": {"block_size": 71}}}))
    assert run_cli("validate", str(bad)) == 1
    out = capsys.readouterr().out
    assert "20% Go / 80% NoGo" in out


def test_validate_missing_file(capsys):
    assert run_cli("validate", "/nonexistent/cfg.json") == 1


def test_simulate_deterministic_minus_wallclock(tmp_path):
    a = tmp_path / "a.mslog"
    b = tmp_path / "b.mslog"
    for out in (a, b):
        code = run_cli("simulate", "--task", "cj", "--seed", "7",
                       "--out", str(out))
        assert code == 0
    assert log_fingerprint(str(a)) == log_fingerprint(str(b))
    with open(a) as fh_a, open(b) as fh_b:
        header_a, header_b = json.loads(fh_a.readline()), json.loads(fh_b.readline())
    header_a.pop("created"), header_b.pop("created")
    assert header_a == header_b


def test_analyze_cj_log_reports_192_experimental(tmp_path, capsys):
    log = tmp_path / "cj.mslog"
    assert run_cli("simulate", "--task", "cj", "--seed", "7",
                   "--out", str(log)) == 0
    assert run_cli("analyze", str(log), "--out-dir", str(tmp_path / "out")) == 0
    with open(tmp_path / "out" / "cj" / "summary.json") as fh:
        summary = json.load(fh)
    assert summary["trial_counts"]["by_phase"]["experimental"] == 192
    assert summary["trial_counts"]["total"] == 672


def test_analyze_missing_log(tmp_path):
    assert run_cli("analyze", str(tmp_path / "nope.mslog")) == 1


def test_analyze_rerun_bitwise_identical(tmp_path):
    log = tmp_path / "pj.mslog"
    assert run_cli("simulate", "--task", "pj", "--seed", "5",
                   "--out", str(log)) == 0
    for d in ("o1", "o2"):
        assert run_cli("analyze", str(log), "--out-dir", str(tmp_path / d)) == 0
    for name in ("summary.json", "conditions.csv", "outcomes.csv"):
        a = (tmp_path / "o1" / "pj" / name).read_bytes()
        b = (tmp_path / "o2" / "pj" / name).read_bytes()
        assert a == b


def test_report_writes_figures_next_to_csv(tmp_path):
    log = tmp_path / "pj.mslog"
    assert run_cli("simulate", "--task", "pj", "--seed", "3",
                   "--out", str(log)) == 0
    assert run_cli("report", str(log), "--out-dir", str(tmp_path / "rep")) == 0
    base = tmp_path / "rep" / "pj"
    assert (base / "conditions.csv").exists()
    assert (base / "summary.json").exists()
    assert (base / "figures" / "rt_by_condition.png").exists()
    assert (base / "figures" / "pj_curves.png").exists()


def test_msi_log_dir_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("MSI_LOG_DIR", str(tmp_path))
    assert run_cli("simulate", "--task", "pj", "--seed", "3") == 0
    assert (tmp_path / "pj-seed3.mslog").exists()


def test_transcript_generation(tmp_path):
    transcript = tmp_path / "t.jsonl"
    assert run_cli("simulate", "--config",
                   os.path.join(CONFIGS, "golden_gng.json"),
                   "--observer", os.path.join(CONFIGS, "observer.default.json"),
                   "--out", str(tmp_path / "t.mslog"),
                   "--transcript", str(transcript)) == 0
    lines = transcript.read_text().splitlines()
    assert json.loads(lines[0])["type"] == "hello"


def test_serve_live_session_over_tcp(tmp_path):
    """Spawn the real server via the CLI and complete a session over TCP."""
    from websockets.sync.client import connect

    from msiengine.observer import load_observer
    from msiengine.service import SimulatorWireClient

    proc = subprocess.Popen(
        [sys.executable, "-m", "msiengine.cli", "serve",
         "--config", os.path.join(CONFIGS, "golden_gng.json"),
         "--endpoint", "127.0.0.1:0",
         "--out", str(tmp_path / "live.mslog")],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        match = re.match(r"LISTENING (\d+)", line)
        assert match, f"unexpected server announcement: {line!r}"
        port = int(match.group(1))
        observer = load_observer(os.path.join(CONFIGS, "observer.default.json"))
        client = SimulatorWireClient(observer)
        with connect(f"ws://127.0.0.1:{port}/session") as ws:
            outcome = client.run(ws.send, lambda: ws.recv())
        assert outcome == "done"
        assert proc.wait(timeout=30) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
    assert (tmp_path / "live.mslog").exists()
