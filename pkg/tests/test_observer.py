"""Simulated observer: response probabilities against direct formulas."""

import math

import numpy as np
import pytest

from msiengine.model import ButtonId, Direction, Modality, Param, Role, Shape, StimulusSpec
from msiengine.observer import (
    DetectionCurve,
    SimObserver,
    SjModel,
    TojModel,
    default_observer,
    observer_from_dict,
    observer_to_dict,
    psychometric_prob,
    sim_respond,
    sj_analytic_crossings,
    sj_probability,
    toj_visual_first_probability,
)
from msiengine.sequencing import (
    GngLabel,
    PjLabel,
    Task,
    TrialSpec,
    TrialTimeline,
)
from msiengine.model import GngCue


def make_observer(**kwargs):
    defaults = dict(
        detection={(Modality.VISUAL, Param.OPACITY):
                   DetectionCurve(threshold=0.3, spread=0.05, guess=0.02,
                                  lapse=0.02)},
        seed=1)
    defaults.update(kwargs)
    return SimObserver(**defaults)


def gng_trial(roles, intensity=0.45):
    cue = GngCue(roles)
    stimuli = []
    for m, role in roles.items():
        if m is Modality.VISUAL:
            shape = Shape.GREEN_CHECKMARK if role is Role.GO else Shape.RED_CROSS
            stimuli.append(StimulusSpec(m, Param.OPACITY, shape, intensity, 500))
        elif m is Modality.AUDITORY:
            stimuli.append(StimulusSpec(m, Param.VOLUME, Shape.TONE_500HZ,
                                        intensity, 500))
        else:
            level = 0.0 if role is Role.GO else intensity
            stimuli.append(StimulusSpec(m, Param.VIBRATION_DRIVE, Shape.VIBRATION,
                                        level, 500 if level else 0))
    timeline = TrialTimeline((0,) * len(stimuli),
                             tuple(s.duration_ms for s in stimuli), 0, 1000, 1000)
    return TrialSpec(Task.GNG, tuple(stimuli), GngLabel(cue), timeline, 0, 0)


class TestPsychometricProb:
    def test_midpoint_at_threshold(self):
        obs = make_observer()
        p = psychometric_prob(obs, Modality.VISUAL, Param.OPACITY, 0.3)
        assert p == pytest.approx(0.02 + (1 - 0.02 - 0.02) / 2)

    def test_step_limit_above_threshold(self):
        obs = make_observer(detection={(Modality.VISUAL, Param.OPACITY):
                                       DetectionCurve(0.3, 1e-9, guess=0.0,
                                                      lapse=0.05)})
        assert psychometric_prob(obs, Modality.VISUAL, Param.OPACITY, 0.6) == \
            pytest.approx(0.95)
        assert psychometric_prob(obs, Modality.VISUAL, Param.OPACITY, 0.1) == \
            pytest.approx(0.0, abs=1e-9)

    def test_matches_formula_on_grid(self):
        obs = make_observer()
        curve = obs.detection[(Modality.VISUAL, Param.OPACITY)]
        for x in np.linspace(0, 1, 101):
            direct = curve.guess + (1 - curve.guess - curve.lapse) / (
                1 + math.exp(-(x - curve.threshold) / curve.spread))
            assert psychometric_prob(obs, Modality.VISUAL, Param.OPACITY,
                                     float(x)) == pytest.approx(direct)


class TestSimRespond:
    def test_zero_noise_gng_deterministic(self):
        detection = {
            (Modality.VISUAL, Param.OPACITY): DetectionCurve(0.3, 1e-9, 0.0, 0.0),
            (Modality.AUDITORY, Param.VOLUME): DetectionCurve(0.3, 1e-9, 0.0, 0.0),
            (Modality.TACTILE, Param.VIBRATION_DRIVE):
                DetectionCurve(0.3, 1e-9, 0.0, 0.0),
        }
        obs = SimObserver(detection=detection, gng_false_press=0.0, seed=3)
        for roles in (
            {Modality.VISUAL: Role.GO},
            {Modality.VISUAL: Role.GO, Modality.AUDITORY: Role.NOGO},
            {Modality.TACTILE: Role.GO},
            {m: Role.GO for m in Modality},
        ):
            r = sim_respond(obs, gng_trial(roles, intensity=0.45))
            assert r.button is ButtonId.X
        for roles in (
            {Modality.VISUAL: Role.NOGO},
            {m: Role.NOGO for m in Modality},
        ):
            r = sim_respond(obs, gng_trial(roles, intensity=0.45))
            assert r.button is None

    def test_sj_probability_peak(self):
        obs = make_observer(sj=SjModel(center_ms=20, width_ms=70, lapse=0.1))
        assert sj_probability(obs, 20) == pytest.approx(1 - 0.1 / 2)

    def test_sj_empirical_matches_model(self):
        obs = make_observer(sj=SjModel(center_ms=0, width_ms=70, lapse=0.04),
                            seed=11)
        soa = 60
        p_model = sj_probability(obs, soa)
        trial = TrialSpec(Task.SJ, (), PjLabel(soa, Task.SJ),
                          TrialTimeline((0,), (150,), 150, 5000, 500), 0, 0)
        n = 10000
        sims = sum(sim_respond(obs, trial).button is ButtonId.R2 for _ in range(n))
        sigma = math.sqrt(p_model * (1 - p_model) / n)
        assert abs(sims / n - p_model) <= 3 * sigma

    def test_toj_accuracy_at_two_jnd(self):
        obs = make_observer(toj=TojModel(pss_ms=0, jnd_ms=60, lapse=0.0), seed=13)
        soa = 120  # pss + 2 jnd: flash leads, visual-first is correct
        p_model = toj_visual_first_probability(obs, soa)
        phi2 = 0.5 * (1 + math.erf(2 / math.sqrt(2)))
        assert p_model == pytest.approx(phi2)
        trial = TrialSpec(Task.TOJ, (), PjLabel(soa, Task.TOJ),
                          TrialTimeline((0,), (150,), 150, 5000, 500), 0, 0)
        n = 1000
        hits = sum(sim_respond(obs, trial).button is ButtonId.R2 for _ in range(n))
        sigma = math.sqrt(phi2 * (1 - phi2) / n)
        assert abs(hits / n - phi2) <= 3 * sigma

    def test_detection_empirical_frequency(self):
        obs = make_observer(seed=17)
        x = 0.33
        p_model = psychometric_prob(obs, Modality.VISUAL, Param.OPACITY, x)
        trial = gng_trial({Modality.VISUAL: Role.GO}, intensity=x)
        n = 10000
        presses = sum(sim_respond(obs, trial).button is not None for _ in range(n))
        sigma = math.sqrt(p_model * (1 - p_model) / n)
        assert abs(presses / n - p_model) <= 3 * sigma

    def test_rt_positive_and_offset_applied(self):
        obs = default_observer(23)
        rts_uni, rts_tri = [], []
        for _ in range(400):
            r1 = sim_respond(obs, gng_trial({Modality.VISUAL: Role.GO},
                                            intensity=0.9))
            r3 = sim_respond(obs, gng_trial({m: Role.GO for m in Modality},
                                            intensity=0.9))
            if r1.rt_ms is not None:
                rts_uni.append(r1.rt_ms)
            if r3.rt_ms is not None:
                rts_tri.append(r3.rt_ms)
        assert all(rt > 0 for rt in rts_uni + rts_tri)
        assert np.mean(rts_uni) > np.mean(rts_tri)  # planted effect direction


class TestObserverDocument:
    def test_round_trip(self):
        obs = default_observer(99)
        doc = observer_to_dict(obs)
        again = observer_to_dict(observer_from_dict(doc))
        assert doc == again

    def test_analytic_crossings(self):
        obs = default_observer(1)
        lo, hi = sj_analytic_crossings(obs)
        assert lo == pytest.approx(20 - 70 * math.sqrt(2 * math.log(2)))
        assert hi == pytest.approx(20 + 70 * math.sqrt(2 * math.log(2)))
        assert sj_probability(obs, lo) == pytest.approx(0.5, abs=1e-9)
        assert sj_probability(obs, hi) == pytest.approx(0.5, abs=1e-9)
