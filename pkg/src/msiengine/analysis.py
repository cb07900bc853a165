"""Post-hoc computation over session logs.

Reaction-time summaries with outlier exclusion, per-condition accuracy,
paired t-tests, psychometric fitting, perceptual-judgment reports,
information transfer rate, frame-drop audits, and questionnaire scores.
Everything operates on immutable replayed sessions and returns plain
rows ready for CSV plus a machine-readable summary dict; no rendering
happens here.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .machine import Classification, TaskSession, TrialOutcome
from .model import tbw_width
from .sequencing import PhaseName, Task


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Reaction times

MAD_CONSISTENCY = 1.4826  # median absolute deviation as a sigma estimator


def exclude_outliers(rts: Sequence[float], lo_ms: float = 150.0,
                     hi_ms: float = 1500.0, mad_factor: float = 3.0) -> list[float]:
    """Drop RTs outside [lo, hi], then beyond median +- mad_factor * MAD.

    The MAD stage repeats until no kept value lies beyond the bound of
    its own kept set, so the rule is idempotent by construction (the
    fixpoint of a fixpoint is itself). MAD carries the usual 1.4826
    consistency scale.
    """
    kept = [r for r in rts if lo_ms <= r <= hi_ms]
    while kept:
        med = float(np.median(kept))
        mad = float(np.median(np.abs(np.asarray(kept) - med))) * MAD_CONSISTENCY
        if mad == 0.0:
            break
        lo, hi = med - mad_factor * mad, med + mad_factor * mad
        narrowed = [r for r in kept if lo <= r <= hi]
        if len(narrowed) == len(kept):
            break
        kept = narrowed
    return kept


_CORRECT = {Classification.HIT, Classification.CORRECT_REJECTION,
            Classification.CORRECT}
_SCORED = _CORRECT | {Classification.MISS, Classification.FALSE_ALARM,
                      Classification.INCORRECT, Classification.NO_RESPONSE,
                      Classification.LATE}


@dataclass(frozen=True)
class ConditionKey:
    task: str
    condition: str
    phase: str
    difficulty: Optional[float]

    def as_tuple(self) -> tuple:
        return (self.task, self.condition, self.phase, self.difficulty)


@dataclass
class RtSummary:
    n: int
    n_excluded: int
    mean_ms: Optional[float]
    median_ms: Optional[float]
    sd_ms: Optional[float]
    accuracy: Optional[float]
    sd_undefined: bool = False


def outcome_condition_key(outcome: TrialOutcome) -> ConditionKey:
    return ConditionKey(task=outcome.task.value, condition=outcome.condition,
                        phase=outcome.phase.value, difficulty=outcome.difficulty)


def condition_summary(outcomes: Iterable[TrialOutcome],
                      rt_bounds: tuple[float, float] = (150.0, 1500.0),
                      mad_factor: float = 3.0) -> dict[ConditionKey, RtSummary]:
    """Per-condition RT statistics on kept RTs; accuracy over all trials."""
    groups: dict[ConditionKey, list[TrialOutcome]] = {}
    for outcome in outcomes:
        groups.setdefault(outcome_condition_key(outcome), []).append(outcome)

    summaries: dict[ConditionKey, RtSummary] = {}
    for key, members in groups.items():
        rts = [o.rt_ms for o in members if o.rt_ms is not None]
        kept = exclude_outliers(rts, rt_bounds[0], rt_bounds[1], mad_factor)
        scored = [o for o in members if o.classification in _SCORED]
        correct = sum(1 for o in scored if o.classification in _CORRECT)
        accuracy = correct / len(scored) if scored else None
        if kept:
            arr = np.asarray(kept)
            sd = float(arr.std(ddof=1)) if len(kept) > 1 else None
            summaries[key] = RtSummary(
                n=len(rts), n_excluded=len(rts) - len(kept),
                mean_ms=float(arr.mean()), median_ms=float(np.median(arr)),
                sd_ms=sd, accuracy=accuracy, sd_undefined=len(kept) < 2)
        else:
            summaries[key] = RtSummary(n=len(rts), n_excluded=len(rts),
                                       mean_ms=None, median_ms=None, sd_ms=None,
                                       accuracy=accuracy, sd_undefined=True)
    return summaries


# ---------------------------------------------------------------------------
# Statistics

def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, int, float]:
    """Paired t statistic, degrees of freedom, and two-tailed p value."""
    if len(a) != len(b):
        raise AnalysisError("paired t-test needs equal-length samples")
    n = len(a)
    if n < 2:
        raise AnalysisError("paired t-test needs at least two pairs")
    diffs = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    mean = diffs.mean()
    sd = diffs.std(ddof=1)
    df = n - 1
    if sd == 0.0:
        t = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
    else:
        t = mean / (sd / math.sqrt(n))
    p = 2.0 * float(stats.t.sf(abs(t), df)) if math.isfinite(t) else 0.0
    return float(t), df, min(1.0, p)


def itr(bits_per_trial: float, decisions_per_minute: float) -> float:
    """Information transfer rate: bits per trial times decisions per minute."""
    if bits_per_trial < 0 or decisions_per_minute < 0:
        raise AnalysisError("itr inputs must be nonnegative")
    return bits_per_trial * decisions_per_minute


# ---------------------------------------------------------------------------
# Psychometric fitting

@dataclass
class PsychometricFit:
    threshold: Optional[float]
    spread: Optional[float]
    lapse: Optional[float]
    converged: bool
    degenerate: bool
    log_likelihood: Optional[float]


def logistic_psychometric(x, threshold, spread, lapse):
    x = np.asarray(x, dtype=float)
    z = np.clip((x - threshold) / spread, -700.0, 700.0)
    core = 1.0 / (1.0 + np.exp(-z))
    return lapse / 2.0 + (1.0 - lapse) * core


def psychometric_log_likelihood(levels, responses, threshold, spread, lapse) -> float:
    p = logistic_psychometric(levels, threshold, spread, lapse)
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    r = np.asarray(responses, dtype=float)
    return float(np.sum(r * np.log(p) + (1.0 - r) * np.log(1.0 - p)))


def fit_psychometric(levels: Sequence[float],
                     responses: Sequence[int]) -> PsychometricFit:
    """Maximum-likelihood logistic fit with a symmetric lapse parameter."""
    levels = list(levels)
    responses = [int(bool(r)) for r in responses]
    if len(levels) != len(responses):
        raise AnalysisError("levels and responses must align")
    distinct = sorted(set(levels))
    if len(distinct) < 2 or len(set(responses)) < 2:
        return PsychometricFit(None, None, None, converged=False, degenerate=True,
                               log_likelihood=None)

    x = np.asarray(levels, dtype=float)
    span = distinct[-1] - distinct[0]
    bounds = [(distinct[0], distinct[-1]), (span * 1e-3, span), (0.0, 0.2)]

    def negative_ll(params):
        return -psychometric_log_likelihood(x, responses, *params)

    best = None
    starts = [
        (float(np.median(x)), span / 5.0, 0.02),
        (distinct[0] + span / 3.0, span / 10.0, 0.01),
        (distinct[0] + 2 * span / 3.0, span / 3.0, 0.05),
    ]
    for start in starts:
        result = optimize.minimize(negative_ll, start, method="L-BFGS-B",
                                   bounds=bounds)
        if best is None or result.fun < best.fun:
            best = result
    assert best is not None
    theta, sigma, lapse = (float(v) for v in best.x)
    return PsychometricFit(theta, sigma, lapse, converged=bool(best.success),
                           degenerate=False, log_likelihood=float(-best.fun))


# ---------------------------------------------------------------------------
# Frame-interval audit

def frame_drop_report(intervals_ms: Sequence[float],
                      refresh_period_ms: float) -> tuple[list[int], float]:
    """Indices of intervals strictly greater than 1.1x the refresh period."""
    if refresh_period_ms <= 0:
        raise AnalysisError("refresh period must be positive")
    bound = 1.1 * refresh_period_ms
    flagged = [i for i, v in enumerate(intervals_ms) if v > bound]
    rate = len(flagged) / len(intervals_ms) if intervals_ms else 0.0
    return flagged, rate


# ---------------------------------------------------------------------------
# Questionnaires

def questionnaire_scores(tlx: Sequence[float],
                         presence: Sequence[float]) -> tuple[float, float]:
    """Mean workload (six 0-100 items) and mean presence (three 1-7 items)."""
    if len(tlx) != 6:
        raise AnalysisError("NASA-TLX needs exactly six subscale ratings")
    if len(presence) != 3:
        raise AnalysisError("presence needs exactly three item ratings")
    for v in tlx:
        if not (0.0 <= v <= 100.0):
            raise AnalysisError(f"TLX item {v} outside [0, 100]")
    for v in presence:
        if not (1.0 <= v <= 7.0):
            raise AnalysisError(f"presence item {v} outside [1, 7]")
    return sum(tlx) / 6.0, sum(presence) / 3.0


# ---------------------------------------------------------------------------
# Perceptual-judgment report

@dataclass
class PjReport:
    sj_curve: list[dict]  # rows: soa_ms, n, p_simultaneous
    toj_curve: list[dict]  # rows: soa_ms, n, accuracy, p_visual_first
    te_sound_first: float
    te_flash_first: float
    tbw_ms: float


def pj_report(session: TaskSession) -> PjReport:
    if session.measured_pj is None:
        raise AnalysisError("session has no simultaneity thresholds")
    sj_groups: dict[int, list[TrialOutcome]] = {}
    toj_groups: dict[int, list[TrialOutcome]] = {}
    for outcome in session.outcomes:
        if outcome.task is Task.SJ:
            sj_groups.setdefault(outcome.label["soa_ms"], []).append(outcome)
        elif outcome.task is Task.TOJ:
            toj_groups.setdefault(outcome.label["soa_ms"], []).append(outcome)
    if not sj_groups and not toj_groups:
        raise AnalysisError("no perceptual-judgment trials in session")

    sj_curve = []
    for soa in sorted(sj_groups):
        members = sj_groups[soa]
        answered = [o for o in members if o.judgment is not None]
        sim = sum(1 for o in answered if o.judgment == "simultaneous")
        sj_curve.append({
            "soa_ms": soa, "n": len(answered),
            "p_simultaneous": sim / len(answered) if answered else None,
        })
    toj_curve = []
    for soa in sorted(toj_groups):
        members = toj_groups[soa]
        scored = [o for o in members
                  if o.classification in (Classification.CORRECT,
                                          Classification.INCORRECT)]
        correct = sum(1 for o in scored
                      if o.classification is Classification.CORRECT)
        visual_first = sum(1 for o in scored if (o.button and o.button.value == "R2"))
        toj_curve.append({
            "soa_ms": soa, "n": len(scored),
            "accuracy": correct / len(scored) if scored else None,
            "p_visual_first": visual_first / len(scored) if scored else None,
        })
    te_sf, te_ff = session.measured_pj
    return PjReport(sj_curve=sj_curve, toj_curve=toj_curve,
                    te_sound_first=te_sf, te_flash_first=te_ff,
                    tbw_ms=tbw_width(te_sf, te_ff))


# ---------------------------------------------------------------------------
# Whole-log analysis bundle

def summarize_session(session: TaskSession,
                      bits_per_trial: Optional[float] = None) -> dict:
    """Machine-readable summary of a completed (or replayed) session."""
    outcomes = session.outcomes
    summaries = condition_summary(outcomes)
    by_phase: dict[str, int] = {}
    for o in outcomes:
        by_phase[o.phase.value] = by_phase.get(o.phase.value, 0) + 1

    flagged, drop_rate = frame_drop_report(session.frame_intervals,
                                           1000.0 / 60.0) if session.frame_intervals \
        else ([], 0.0)

    questionnaire = {}
    tlx = session.questionnaire_answers.get("nasa_tlx")
    presence = session.questionnaire_answers.get("presence")
    if tlx and presence:
        tlx_score, presence_score = questionnaire_scores(tlx, presence)
        questionnaire = {"nasa_tlx": tlx_score, "presence": presence_score}

    summary: dict = {
        "task": session.task,
        "seed": session.seed,
        "status": session.status.value,
        "trial_counts": {
            "total": len(outcomes),
            "by_phase": dict(sorted(by_phase.items())),
            "calibration": len(session.calibration_outcomes),
        },
        "violations": len(session.violations),
        "thresholds": {
            "gng": dict(sorted(session.measured_gng.items())),
            "cj": {f"{m.value}.{d.value}": v
                   for (m, d), v in sorted(session.measured_cj.items(),
                                           key=lambda kv: (kv[0][0].value,
                                                           kv[0][1].value))},
            "pj": list(session.measured_pj) if session.measured_pj else None,
        },
        "frame_drops": {"flagged": len(flagged),
                        "total": len(session.frame_intervals),
                        "rate": drop_rate},
        "questionnaire_scores": questionnaire,
        "conditions": len(summaries),
    }
    if session.measured_pj is not None and any(
            o.task in (Task.SJ, Task.TOJ) for o in outcomes):
        report = pj_report(session)
        summary["pj"] = {
            "te_sound_first": report.te_sound_first,
            "te_flash_first": report.te_flash_first,
            "tbw_ms": report.tbw_ms,
        }
    scored = [o for o in outcomes if o.classification in _SCORED]
    summary["decisions"] = len(scored)
    if bits_per_trial is not None:
        minutes = _session_minutes(session)
        if minutes > 0:
            decisions_per_minute = len(scored) / minutes
            summary["itr_bits_per_min"] = itr(bits_per_trial, decisions_per_minute)
            summary["decisions_per_minute"] = decisions_per_minute
    return summary


def _session_minutes(session: TaskSession) -> float:
    total_ms = 0.0
    for phase in session.plan.phases:
        for block in phase.blocks:
            if block.trials:
                total_ms += sum(t.timing.slot_ms for t in block.trials)
                total_ms += block.rest_after_ms
    return total_ms / 60000.0


def condition_rows(summaries: Mapping[ConditionKey, RtSummary]) -> list[dict]:
    rows = []
    for key in sorted(summaries, key=lambda k: k.as_tuple()[:3] + (k.difficulty or 0,)):
        s = summaries[key]
        rows.append({
            "task": key.task, "condition": key.condition, "phase": key.phase,
            "difficulty": key.difficulty, "n": s.n, "n_excluded": s.n_excluded,
            "mean_ms": s.mean_ms, "median_ms": s.median_ms, "sd_ms": s.sd_ms,
            "accuracy": s.accuracy,
        })
    return rows


def outcome_rows(outcomes: Iterable[TrialOutcome]) -> list[dict]:
    return [o.to_dict() for o in outcomes]


def write_csv(path: str, rows: Sequence[Mapping], fieldnames: Optional[list[str]] = None) -> None:
    if not rows and fieldnames is None:
        fieldnames = []
    if fieldnames is None:
        fieldnames = list(rows[0].keys())
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            flat = {k: _csv_cell(row.get(k)) for k in fieldnames}
            writer.writerow(flat)


def _csv_cell(value):
    if isinstance(value, dict):
        from .config import canonical_json

        return canonical_json(value)
    if isinstance(value, float):
        return repr(value)
    return value
