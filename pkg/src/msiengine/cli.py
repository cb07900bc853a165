"""Operator entry points.

Subcommands: ``validate`` a config, ``simulate`` a headless session to
an ``.mslog`` file, ``serve`` a live session over WebSocket, ``analyze``
logs into CSV tables plus a JSON summary, and ``report`` which adds
rendered PNG figures next to the delimited output. ``MSI_LOG_DIR`` sets
the default output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from .config import ConfigError, canonical_json, default_config, validate_config


def _out_dir(explicit: Optional[str]) -> str:
    return explicit or os.environ.get("MSI_LOG_DIR") or os.getcwd()


def _load_config_arg(args) -> dict:
    if args.config:
        if not os.path.exists(args.config):
            raise FileNotFoundError(args.config)
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    else:
        raw = {}
    if getattr(args, "task", None):
        raw["task"] = args.task
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    raw.setdefault("task", "gng")
    raw.setdefault("seed", 42)
    return validate_config(raw)


def _load_observer_arg(args):
    from .observer import default_observer, load_observer

    if getattr(args, "observer", None):
        if not os.path.exists(args.observer):
            raise FileNotFoundError(args.observer)
        return load_observer(args.observer)
    return default_observer()


def cmd_validate(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = validate_config(raw)
    except ConfigError as exc:
        print(f"invalid config ({len(exc.violations)} violations):")
        for violation in exc.violations:
            print(f"  - {violation}")
        return 1
    print(f"valid: task={cfg['task']} seed={cfg['seed']}")
    return 0


def cmd_simulate(args) -> int:
    from .observer import observer_to_dict
    from .sessionlog import make_header, write_log
    from .simulate import run_simulated_session

    cfg = _load_config_arg(args)
    observer = _load_observer_arg(args)
    out = args.out or os.path.join(
        _out_dir(None), f"{cfg['task']}-seed{cfg['seed']}.mslog")

    if args.transcript:
        from .service import run_loopback_session

        host, client = run_loopback_session(cfg, observer, log_path=out)
        os.makedirs(os.path.dirname(os.path.abspath(args.transcript)), exist_ok=True)
        with open(args.transcript, "w", encoding="utf-8") as fh:
            for message in client.transcript:
                fh.write(canonical_json(message) + "\n")
        session = host.machine
        print(f"wire session complete: {len(session.outcomes)} trials, "
              f"transcript {len(client.transcript)} messages -> {args.transcript}")
    else:
        result = run_simulated_session(cfg, observer)
        header = make_header(cfg, observer_to_dict(observer))
        write_log(out, header, result.events)
        session = result.session
        print(f"simulated session complete: {len(session.outcomes)} trials, "
              f"{len(result.events)} events")
    print(f"log: {out}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve_session

    cfg = _load_config_arg(args)
    out = args.out or os.path.join(
        _out_dir(None), f"{cfg['task']}-seed{cfg['seed']}-live.mslog")
    code = serve_session(cfg, endpoint=args.endpoint, log_path=out,
                         resume_wait_s=args.resume_wait)
    status = {0: "complete", 2: "suspended", 3: "protocol error"}.get(code, "?")
    print(f"session {status}; log: {out}")
    return code


def _analyze_one(path: str, out_dir: str, bits_per_trial: Optional[float],
                 figures: bool) -> dict:
    from .analysis import (
        condition_rows,
        condition_summary,
        outcome_rows,
        pj_report,
        summarize_session,
        write_csv,
    )
    from .sessionlog import replay_log

    session = replay_log(path)
    stem = os.path.splitext(os.path.basename(path))[0]
    target = os.path.join(out_dir, stem)
    os.makedirs(target, exist_ok=True)

    summary = summarize_session(session, bits_per_trial=bits_per_trial)
    summaries = condition_summary(session.outcomes)
    write_csv(os.path.join(target, "conditions.csv"), condition_rows(summaries),
              ["task", "condition", "phase", "difficulty", "n", "n_excluded",
               "mean_ms", "median_ms", "sd_ms", "accuracy"])
    out_fields = ["phase", "block_index", "trial_index", "block_name", "block_kind",
                  "task", "condition", "difficulty", "label", "button", "rt_ms",
                  "classification", "judgment", "late", "level"]
    write_csv(os.path.join(target, "outcomes.csv"),
              outcome_rows(session.outcomes), out_fields)
    write_csv(os.path.join(target, "calibration.csv"),
              outcome_rows(session.calibration_outcomes), out_fields)

    report = None
    if summary.get("pj"):
        report = pj_report(session)
        write_csv(os.path.join(target, "pj_sj_curve.csv"), report.sj_curve,
                  ["soa_ms", "n", "p_simultaneous"])
        write_csv(os.path.join(target, "pj_toj_curve.csv"), report.toj_curve,
                  ["soa_ms", "n", "accuracy", "p_visual_first"])

    if figures:
        from . import figures as figs

        figdir = os.path.join(target, "figures")
        rows = condition_rows(summaries)
        figs.render_rt_by_condition(rows, figdir)
        figs.render_accuracy_by_condition(rows, figdir)
        figs.render_frame_intervals(session.frame_intervals, 1000.0 / 60.0, figdir)
        figs.render_threshold_traces(
            outcome_rows(session.calibration_outcomes), figdir)
        if report is not None:
            figs.render_pj_curves(report, figdir)

    with open(os.path.join(target, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(canonical_json(summary) + "\n")
    print(f"{path}: {summary['trial_counts']['total']} trials -> {target}")
    return summary


def cmd_analyze(args) -> int:
    out_dir = _out_dir(args.out_dir)
    for path in args.logs:
        if not os.path.exists(path):
            print(f"error: log file not found: {path}", file=sys.stderr)
            return 1
    for path in args.logs:
        _analyze_one(path, out_dir, args.bits_per_trial, figures=False)
    return 0


def cmd_report(args) -> int:
    if not os.path.exists(args.log):
        print(f"error: log file not found: {args.log}", file=sys.stderr)
        return 1
    _analyze_one(args.log, _out_dir(args.out_dir), args.bits_per_trial,
                 figures=True)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msiengine",
        description="Engine for multisensory-integration study protocols")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config document")
    p.add_argument("config")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("simulate", help="run a headless session on a virtual clock")
    p.add_argument("--task", choices=["gng", "pj", "cj"])
    p.add_argument("--config")
    p.add_argument("--observer")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--transcript",
                   help="run over the wire protocol and write the client transcript")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("serve", help="serve one live session over WebSocket")
    p.add_argument("--task", choices=["gng", "pj", "cj"])
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--endpoint", default="127.0.0.1:8765")
    p.add_argument("--out")
    p.add_argument("--resume-wait", type=float, default=10.0)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("analyze", help="summarize logs into CSV + JSON")
    p.add_argument("logs", nargs="+")
    p.add_argument("--out-dir")
    p.add_argument("--bits-per-trial", type=float)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("report", help="analyze one log and render figures")
    p.add_argument("log")
    p.add_argument("--out-dir")
    p.add_argument("--bits-per-trial", type=float)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print("invalid config:", file=sys.stderr)
        for violation in exc.violations:
            print(f"  - {violation}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
