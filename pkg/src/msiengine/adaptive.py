"""Threshold-estimation machinery.

Three estimators cover every thresholding procedure in the battery:

* an ascending staircase that starts near zero and climbs a fixed step
  until the observer confirms detection on consecutive trials,
* a bank of four interleaved simultaneity-judgment staircases (two
  sound-first, two flash-first) whose terminal levels define the
  temporal binding window, and
* a QUEST estimator keeping a posterior over detection threshold on a
  log-spaced intensity grid, tested at the posterior mode.

All states are plain values advanced by pure transition functions, so
they serialize into the session log and replay exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .model import ModelError


class Response(str, Enum):
    DETECTED = "detected"
    NOT_DETECTED = "not_detected"


class SjResponse(str, Enum):
    SIMULTANEOUS = "simultaneous"
    NOT_SIMULTANEOUS = "not_simultaneous"


class Phase(str, Enum):
    RUNNING = "running"
    AWAIT_CONFIRM = "await_confirm"
    DONE = "done"


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class StaircaseState:
    """Ascending staircase over a [0, 1] intensity parameter."""

    level: float
    step: float
    confirmations_required: int = 2
    max_trials: int = 100
    history: tuple[tuple[float, Response], ...] = ()
    reversals: int = 0
    phase: Phase = Phase.RUNNING
    confirm_count: int = 0
    threshold: Optional[float] = None

    @property
    def done(self) -> bool:
        return self.phase is Phase.DONE

    @property
    def trials_run(self) -> int:
        return len(self.history)


def new_staircase(start: float = 0.02, step: float = 0.02,
                  confirmations: int = 2, max_trials: int = 100) -> StaircaseState:
    if not (0.0 < start <= 1.0) or not (0.0 < step <= 1.0):
        raise EstimatorError("staircase start and step must lie in (0, 1]")
    return StaircaseState(level=min(start, 1.0), step=step,
                          confirmations_required=confirmations, max_trials=max_trials)


def staircase_step(state: StaircaseState, response: Response) -> StaircaseState:
    """Advance one trial: climb on misses, confirm on consecutive detections.

    The threshold is the level the observer detected on
    ``confirmations_required`` consecutive trials. A safety cap on trial
    count terminates at the ceiling so runaway observers cannot hang a
    session; the estimate is then the current (clamped) level.
    """
    if state.done:
        raise EstimatorError("staircase already terminated")
    history = state.history + ((state.level, response),)
    if response is Response.DETECTED:
        confirm = state.confirm_count + 1
        if confirm >= state.confirmations_required:
            return replace(state, history=history, confirm_count=confirm,
                           phase=Phase.DONE, threshold=state.level)
        return replace(state, history=history, confirm_count=confirm,
                       phase=Phase.AWAIT_CONFIRM)
    # Not detected: resume the climb one step up, capped at full intensity.
    reversals = state.reversals + (1 if state.phase is Phase.AWAIT_CONFIRM else 0)
    level = min(1.0, state.level + state.step)
    if len(history) >= state.max_trials:
        return replace(state, history=history, level=level, reversals=reversals,
                       phase=Phase.DONE, confirm_count=0, threshold=level)
    return replace(state, history=history, level=level, reversals=reversals,
                   phase=Phase.RUNNING, confirm_count=0)


@dataclass(frozen=True)
class SjStaircase:
    """One simultaneity staircase; sign locks the side it explores."""

    level: float  # SOA in ms; <= 0 for sound-first, >= 0 for flash-first
    sign: int  # -1 sound-first, +1 flash-first
    step: float
    floor: float
    max_reversals: int
    max_trials: int
    cap: float
    history: tuple[tuple[float, SjResponse], ...] = ()
    reversals: int = 0
    last_move: int = 0  # +1 away from zero, -1 toward zero, 0 before first move
    done: bool = False

    @property
    def trials_run(self) -> int:
        return len(self.history)

    @property
    def last_decision(self) -> float:
        """Final tested SOA; the per-side thresholds average these."""
        if not self.done:
            raise EstimatorError("staircase still running")
        return self.history[-1][0] if self.history else self.level


@dataclass(frozen=True)
class SjStaircaseBank:
    """Four interleaved staircases: ids sf0, sf1 (sound-first), ff0, ff1."""

    staircases: tuple[SjStaircase, ...]
    ids: tuple[str, ...] = ("sf0", "sf1", "ff0", "ff1")

    def by_id(self, staircase_id: str) -> SjStaircase:
        try:
            return self.staircases[self.ids.index(staircase_id)]
        except ValueError:
            raise EstimatorError(f"unknown staircase id {staircase_id!r}") from None

    @property
    def all_done(self) -> bool:
        return all(s.done for s in self.staircases)

    def active_ids(self) -> tuple[str, ...]:
        return tuple(i for i, s in zip(self.ids, self.staircases) if not s.done)


def new_sj_bank(initial_step_ms: float = 30.0, floor_ms: float = 10.0,
                max_reversals: int = 8, max_trials: int = 40,
                cap_ms: float = 1000.0) -> SjStaircaseBank:
    """Initial SOAs: -250 and 0 ms sound-first, 0 and +250 ms flash-first."""
    def make(level: float, sign: int) -> SjStaircase:
        return SjStaircase(level=level, sign=sign, step=initial_step_ms,
                           floor=floor_ms, max_reversals=max_reversals,
                           max_trials=max_trials, cap=cap_ms)

    return SjStaircaseBank(staircases=(
        make(-250.0, -1), make(0.0, -1), make(0.0, +1), make(+250.0, +1),
    ))


def _sj_advance(s: SjStaircase, response: SjResponse) -> SjStaircase:
    history = s.history + ((s.level, response),)
    # Judged simultaneous: make it harder by moving away from zero.
    move = +1 if response is SjResponse.SIMULTANEOUS else -1
    reversed_now = s.last_move != 0 and move != s.last_move
    reversals = s.reversals + (1 if reversed_now else 0)
    step = max(s.floor, s.step / 2.0) if reversed_now else s.step
    magnitude = abs(s.level) + move * step
    magnitude = min(max(magnitude, 0.0), s.cap)
    level = s.sign * magnitude
    done = reversals >= s.max_reversals or len(history) >= s.max_trials
    return replace(s, history=history, reversals=reversals, step=step,
                   level=level, last_move=move, done=done)


def sj_staircase_update(bank: SjStaircaseBank, staircase_id: str,
                        response: SjResponse) -> SjStaircaseBank:
    index = bank.ids.index(staircase_id) if staircase_id in bank.ids else -1
    if index < 0:
        raise EstimatorError(f"unknown staircase id {staircase_id!r}")
    s = bank.staircases[index]
    if s.done:
        raise EstimatorError(f"staircase {staircase_id} already terminated")
    staircases = list(bank.staircases)
    staircases[index] = _sj_advance(s, response)
    return replace(bank, staircases=tuple(staircases))


def sj_select_next(bank: SjStaircaseBank, rng: np.random.Generator) -> str:
    """Seeded uniform pick among unfinished staircases (interleaving)."""
    active = bank.active_ids()
    if not active:
        raise EstimatorError("all staircases terminated")
    return active[int(rng.integers(len(active)))]


def sj_thresholds(bank: SjStaircaseBank) -> tuple[float, float]:
    """Per-side thresholds: mean of the two staircases' last-decision SOAs."""
    if not bank.all_done:
        raise EstimatorError("not all staircases have terminated")
    sf = [s.last_decision for s in bank.staircases if s.sign < 0]
    ff = [s.last_decision for s in bank.staircases if s.sign > 0]
    return (sum(sf) / len(sf), sum(ff) / len(ff))


def weibull_psychometric(x: np.ndarray | float, threshold: np.ndarray | float,
                         beta: float, gamma: float, delta: float):
    """Detection probability gamma + (1-gamma-delta)(1 - exp(-(x/t)^beta))."""
    ratio = np.asarray(x, dtype=float) / np.asarray(threshold, dtype=float)
    return gamma + (1.0 - gamma - delta) * (1.0 - np.exp(-np.power(ratio, beta)))


@dataclass(frozen=True)
class QuestState:
    """Posterior over detection threshold on a log-spaced grid."""

    grid: tuple[float, ...]
    log_posterior: tuple[float, ...]
    beta: float = 3.5
    gamma: float = 0.5
    delta: float = 0.02
    trials_done: int = 0
    max_trials: int = 30

    @property
    def done(self) -> bool:
        return self.trials_done >= self.max_trials

    def posterior(self) -> np.ndarray:
        log_p = np.asarray(self.log_posterior)
        p = np.exp(log_p - log_p.max())
        return p / p.sum()


def new_quest(prior_mean: float, prior_sigma_octaves: float = 1.0,
              grid_min: float = 0.005, grid_max: float = 1.0,
              grid_points: int = 200, beta: float = 3.5, gamma: float = 0.5,
              delta: float = 0.02, max_trials: int = 30) -> QuestState:
    """Gaussian prior in log intensity centered on a prior estimate.

    ``prior_sigma_octaves`` is the prior spread expressed in octaves of
    intensity (factors of two).
    """
    if not (grid_min < prior_mean <= grid_max):
        raise EstimatorError(
            f"prior mean {prior_mean} outside grid span ({grid_min}, {grid_max}]")
    grid = np.geomspace(grid_min, grid_max, grid_points)
    sigma = prior_sigma_octaves * math.log(2.0)
    log_prior = -0.5 * ((np.log(grid) - math.log(prior_mean)) / sigma) ** 2
    p = np.exp(log_prior - log_prior.max())
    p /= p.sum()
    return QuestState(grid=tuple(float(g) for g in grid),
                      log_posterior=tuple(float(v) for v in np.log(p)),
                      beta=beta, gamma=gamma, delta=delta, max_trials=max_trials)


def quest_update(state: QuestState, tested_level: float, response: Response) -> QuestState:
    """Bayes step: posterior(t) proportional to prior(t) * likelihood."""
    if state.done:
        raise EstimatorError("quest run already complete")
    grid = np.asarray(state.grid)
    if not (grid[0] <= tested_level <= grid[-1]):
        raise EstimatorError(
            f"tested level {tested_level} outside grid span [{grid[0]}, {grid[-1]}]")
    psi = weibull_psychometric(tested_level, grid, state.beta, state.gamma, state.delta)
    likelihood = psi if response is Response.DETECTED else 1.0 - psi
    log_p = np.asarray(state.log_posterior) + np.log(likelihood)
    p = np.exp(log_p - log_p.max())
    p /= p.sum()
    return replace(state, log_posterior=tuple(float(v) for v in np.log(p)),
                   trials_done=state.trials_done + 1)


def quest_query(state: QuestState) -> tuple[float, float]:
    """(next level to test, current estimate) = (posterior mode, posterior mean)."""
    p = state.posterior()
    if not math.isclose(float(p.sum()), 1.0, abs_tol=1e-9):
        raise EstimatorError("posterior not normalized")
    grid = np.asarray(state.grid)
    mode = float(grid[int(np.argmax(p))])
    mean = float(np.dot(grid, p))
    return mode, mean


def staircase_to_dict(s: StaircaseState) -> dict:
    return {
        "level": s.level, "step": s.step, "phase": s.phase.value,
        "confirm_count": s.confirm_count, "reversals": s.reversals,
        "threshold": s.threshold, "trials": s.trials_run,
        "history": [[lv, r.value] for lv, r in s.history],
    }


def sj_bank_to_dict(bank: SjStaircaseBank) -> dict:
    return {
        sid: {
            "level": s.level, "sign": s.sign, "step": s.step,
            "reversals": s.reversals, "done": s.done,
            "history": [[lv, r.value] for lv, r in s.history],
        }
        for sid, s in zip(bank.ids, bank.staircases)
    }
