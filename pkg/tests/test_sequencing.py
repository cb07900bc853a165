"""Plan construction: exact compositions, schedules, determinism."""

from collections import Counter

import numpy as np
import pytest

from msiengine.config import default_config
from msiengine.model import (
    Direction,
    Focus,
    Modality,
    PjThresholds,
    Role,
    ThresholdProfile,
)
from msiengine.sequencing import (
    PhaseName,
    PlanError,
    Task,
    build_cj_session,
    build_gng_session,
    build_pj_session,
    constrained_shuffle,
    cue_type_name,
    gng_cue_types,
    percent_schedule,
    pj_soa_values,
    plan_from_dict,
    plan_to_dict,
    plan_to_json,
)


@pytest.fixture(scope="module")
def profile():
    return ThresholdProfile(
        gng={"visual_go_opacity": 0.2, "visual_nogo_opacity": 0.25,
             "auditory_go_volume": 0.15, "auditory_nogo_volume": 0.2,
             "tactile_nogo_drive": 0.3},
        cj={(m, d): 0.2 for m in Modality for d in Direction},
        pj=PjThresholds(-80.0, 120.0),
    )


class TestConstrainedShuffle:
    def test_deterministic(self):
        items = list("ABCDEFGH")
        assert constrained_shuffle(items, 7) == constrained_shuffle(items, 7)

    def test_singleton(self):
        assert constrained_shuffle(["x"], 0) == ["x"]

    def test_multiset_preserved(self):
        items = ["a"] * 3 + ["b"] * 5
        out = constrained_shuffle(items, 13)
        assert Counter(out) == Counter(items)

    def test_empty_rejected(self):
        with pytest.raises(PlanError):
            constrained_shuffle([], 1)

    def test_positionwise_frequency_binomial(self):
        # 1000 shuffles of {A x2, B x8}: per-position A-frequency within
        # 3 sigma of 0.2 (sigma = sqrt(0.2*0.8/1000)).
        items = ["A"] * 2 + ["B"] * 8
        counts = np.zeros(10)
        for seed in range(1000):
            out = constrained_shuffle(items, seed)
            for i, v in enumerate(out):
                counts[i] += v == "A"
        freqs = counts / 1000.0
        sigma = (0.2 * 0.8 / 1000) ** 0.5
        assert np.all(np.abs(freqs - 0.2) <= 3 * sigma)


class TestPercentSchedule:
    def test_gng_adaptive(self):
        assert percent_schedule("gng_adaptive") == [138.0, 126.0, 114.0, 102.0, 90.0]

    def test_cj_adaptive_same_values(self):
        assert percent_schedule("cj_adaptive") == percent_schedule("gng_adaptive")

    def test_pj_n_sequence_endpoint(self):
        seq = percent_schedule("pj_n")
        assert seq == [1.925, 1.775, 1.625, 1.475, 1.325, 1.175]
        assert seq[-1] == pytest.approx(1.925 - 5 * 0.15)

    def test_unknown_kind(self):
        with pytest.raises(PlanError):
            percent_schedule("bogus")


class TestGngPlan:
    def test_mixed_block_composition(self, profile):
        cfg = default_config("gng", 42)
        plan = build_gng_session(cfg, profile, 42)
        mixed = [b for p in plan.phases for b in p.blocks if b.kind.value == "gng_mixed"
                 and p.name is PhaseName.EXPERIMENTAL]
        assert len(mixed) == 1
        trials = mixed[0].trials
        assert len(trials) == 70
        go = [t for t in trials if t.label.is_go]
        nogo = [t for t in trials if not t.label.is_go]
        assert len(go) == 14 and len(nogo) == 56
        go_types = Counter(cue_type_name(t.label.cue.modalities) for t in go)
        nogo_types = Counter(cue_type_name(t.label.cue.modalities) for t in nogo)
        assert set(go_types.values()) == {2}
        assert set(nogo_types.values()) == {8}
        assert len(go_types) == len(nogo_types) == 7

    def test_seven_typed_blocks_plus_mixed(self, profile):
        cfg = default_config("gng", 9)
        plan = build_gng_session(cfg, profile, 9)
        experimental = next(p for p in plan.phases
                            if p.name is PhaseName.EXPERIMENTAL)
        kinds = [b.kind.value for b in experimental.blocks]
        assert kinds.count("gng_typed") == 7
        assert kinds.count("gng_mixed") == 1
        typed_sets = {frozenset(b.trials[0].label.cue.modalities)
                      for b in experimental.blocks if b.kind.value == "gng_typed"}
        assert typed_sets == set(gng_cue_types())

    def test_typed_block_20_80(self, profile):
        cfg = default_config("gng", 4)
        plan = build_gng_session(cfg, profile, 4)
        for phase in plan.phases:
            for block in phase.blocks:
                if block.kind.value != "gng_typed":
                    continue
                go = sum(1 for t in block.trials if t.label.is_go)
                assert go == len(block.trials) // 5

    def test_adaptive_phase_five_blocks_with_schedule(self, profile):
        cfg = default_config("gng", 42)
        plan = build_gng_session(cfg, profile, 42)
        adaptive = next(p for p in plan.phases if p.name is PhaseName.ADAPTIVE)
        assert len(adaptive.blocks) == 5
        assert [b.difficulty for b in adaptive.blocks] == [138.0, 126.0, 114.0,
                                                           102.0, 90.0]

    def test_adaptive_block5_intensity_at_90_percent(self, profile):
        cfg = default_config("gng", 42)
        plan = build_gng_session(cfg, profile, 42)
        adaptive = next(p for p in plan.phases if p.name is PhaseName.ADAPTIVE)
        block5 = adaptive.blocks[-1]
        for trial in block5.trials:
            for stim in trial.stimuli:
                if stim.modality is Modality.VISUAL:
                    role = trial.label.cue.roles[Modality.VISUAL]
                    base = 0.2 if role is Role.GO else 0.25
                    assert stim.intensity == pytest.approx(base * 0.90)

    def test_experimental_intensity_150_percent(self, profile):
        cfg = default_config("gng", 42)
        plan = build_gng_session(cfg, profile, 42)
        experimental = next(p for p in plan.phases
                            if p.name is PhaseName.EXPERIMENTAL)
        trial = experimental.blocks[0].trials[0]
        for stim in trial.stimuli:
            if stim.modality is Modality.AUDITORY:
                role = trial.label.cue.roles[Modality.AUDITORY]
                base = 0.15 if role is Role.GO else 0.2
                assert stim.intensity == pytest.approx(min(1.0, base * 1.5))

    def test_tactile_go_is_zero_drive(self, profile):
        cfg = default_config("gng", 2)
        plan = build_gng_session(cfg, profile, 2)
        seen = 0
        for trial in plan.resolved_trials():
            roles = trial.label.cue.roles
            if roles.get(Modality.TACTILE) is Role.GO:
                tactile = [s for s in trial.stimuli
                           if s.modality is Modality.TACTILE]
                assert tactile and tactile[0].intensity == 0.0
                seen += 1
        assert seen > 0

    def test_plans_bit_identical_across_runs(self, profile):
        cfg = default_config("gng", 123)
        a = plan_to_json(build_gng_session(cfg, profile, 123))
        b = plan_to_json(build_gng_session(cfg, profile, 123))
        assert a == b

    def test_block_order_varies_with_seed(self, profile):
        cfg = default_config("gng", 1)
        names_by_seed = set()
        for seed in range(6):
            plan = build_gng_session(cfg, profile, seed)
            experimental = next(p for p in plan.phases
                                if p.name is PhaseName.EXPERIMENTAL)
            names_by_seed.add(tuple(b.name for b in experimental.blocks[:7]))
        assert len(names_by_seed) > 1


class TestPjPlan:
    def test_soa_value_set(self):
        assert sorted(pj_soa_values(-100, 150)) == [-200, -100, -50, 75, 150, 300]

    def test_degenerate_thresholds_rejected(self):
        with pytest.raises(PlanError):
            pj_soa_values(0, 0)

    def test_six_sj_and_six_toj_blocks(self, profile):
        cfg = default_config("pj", 42)
        plan = build_pj_session(cfg, -80, 120, 42)
        experimental = next(p for p in plan.phases
                            if p.name is PhaseName.EXPERIMENTAL)
        kinds = Counter(b.kind.value for b in experimental.blocks)
        assert kinds == {"sj": 6, "toj": 6}

    def test_rest_between_blocks_7s(self, profile):
        cfg = default_config("pj", 42)
        plan = build_pj_session(cfg, -80, 120, 42)
        for phase in plan.phases:
            for block in phase.blocks:
                assert block.rest_after_ms == 7000

    def test_each_soa_exactly_six_times_per_task(self):
        cfg = default_config("pj", 7)
        plan = build_pj_session(cfg, -80, 120, 7)
        experimental = next(p for p in plan.phases
                            if p.name is PhaseName.EXPERIMENTAL)
        for task in (Task.SJ, Task.TOJ):
            soas = Counter(t.label.soa_ms
                           for b in experimental.blocks for t in b.trials
                           if t.task is task)
            assert set(soas.values()) == {6}
            assert len(soas) == 6

    def test_block_soas_subset_of_phase_multiset(self):
        cfg = default_config("pj", 3)
        plan = build_pj_session(cfg, -80, 120, 3)
        phase_multiset = Counter(pj_soa_values(-80, 120) * 6)
        experimental = next(p for p in plan.phases
                            if p.name is PhaseName.EXPERIMENTAL)
        for block in experimental.blocks:
            block_counts = Counter(t.label.soa_ms for t in block.trials)
            assert all(block_counts[k] <= phase_multiset[k] for k in block_counts)

    def test_adaptive_pairs_follow_n_schedule(self):
        cfg = default_config("pj", 42)
        plan = build_pj_session(cfg, -80, 120, 42)
        adaptive = next(p for p in plan.phases if p.name is PhaseName.ADAPTIVE)
        assert len(adaptive.blocks) == 12
        difficulties = [b.difficulty for b in adaptive.blocks]
        expected = [n for n in percent_schedule("pj_n") for _ in range(2)]
        assert difficulties == expected
        # each pair holds one SJ and one TOJ block
        for i in range(0, 12, 2):
            pair_kinds = {adaptive.blocks[i].kind.value,
                          adaptive.blocks[i + 1].kind.value}
            assert pair_kinds == {"sj", "toj"}

    def test_adaptive_soas_use_n_and_inverse(self):
        cfg = default_config("pj", 11)
        plan = build_pj_session(cfg, -80, 120, 11)
        adaptive = next(p for p in plan.phases if p.name is PhaseName.ADAPTIVE)
        first = adaptive.blocks[0]
        n = first.difficulty
        allowed = {int(round(v)) for v in (n * -80, -80 / n, n * 120, 120 / n)}
        block_soas = {t.label.soa_ms for t in first.trials}
        assert block_soas <= allowed
        assert len(block_soas) == 4  # each of the four values appears

    def test_soa_sign_convention_in_timeline(self):
        cfg = default_config("pj", 5)
        plan = build_pj_session(cfg, -80, 120, 5)
        for trial in plan.resolved_trials():
            visual_on, audio_on = trial.timing.stimulus_onsets_ms
            assert audio_on - visual_on == trial.label.soa_ms
            # both stimuli terminate together
            assert trial.timing.stimulus_offsets_ms[0] == \
                trial.timing.stimulus_offsets_ms[1]


class TestCjPlan:
    def test_composition_exactness(self, profile):
        cfg = default_config("cj", 42)
        plan = build_cj_session(cfg, profile, 42)
        experimental = next(p for p in plan.phases
                            if p.name is PhaseName.EXPERIMENTAL)
        assert len(experimental.blocks) == 6
        total = 0
        for block in experimental.blocks:
            assert len(block.trials) == 32
            triples = Counter(tuple(t.label.dirs[m] for m in Modality)
                              for t in block.trials)
            assert len(triples) == 8
            assert set(triples.values()) == {4}
            total += len(block.trials)
        assert total == 192
        foci = Counter(b.trials[0].label.focus for b in experimental.blocks)
        assert foci == {Focus.AV: 2, Focus.VT: 2, Focus.AT: 2}

    def test_16_per_subcondition(self, profile):
        # Subcondition: focus x (attended congruent? x distractor relation).
        cfg = default_config("cj", 42)
        plan = build_cj_session(cfg, profile, 42)
        experimental = next(p for p in plan.phases
                            if p.name is PhaseName.EXPERIMENTAL)
        counts = Counter()
        for block in experimental.blocks:
            for t in block.trials:
                focus = t.label.focus
                a, b = focus.attended
                unattended = next(m for m in Modality if m not in (a, b))
                congruent = t.label.dirs[a] == t.label.dirs[b]
                if congruent:
                    sub = "all" if t.label.dirs[unattended] == t.label.dirs[a] \
                        else "deviant"
                else:
                    sub = "dist=" + ("first"
                                     if t.label.dirs[unattended] == t.label.dirs[a]
                                     else "second")
                counts[(focus, congruent, sub)] += 1
        assert len(counts) == 12  # 3 foci x 4 subconditions
        assert set(counts.values()) == {16}

    def test_adaptive_15_blocks_5_per_focus(self, profile):
        cfg = default_config("cj", 42)
        plan = build_cj_session(cfg, profile, 42)
        adaptive = next(p for p in plan.phases if p.name is PhaseName.ADAPTIVE)
        assert len(adaptive.blocks) == 15
        foci = Counter(b.trials[0].label.focus for b in adaptive.blocks)
        assert foci == {Focus.AV: 5, Focus.VT: 5, Focus.AT: 5}

    def test_adaptive_percent_advances_every_three_blocks(self, profile):
        cfg = default_config("cj", 42)
        plan = build_cj_session(cfg, profile, 42)
        adaptive = next(p for p in plan.phases if p.name is PhaseName.ADAPTIVE)
        difficulties = [b.difficulty for b in adaptive.blocks]
        expected = [v for v in percent_schedule("cj_adaptive") for _ in range(3)]
        assert difficulties == expected
        # each set of three covers all foci
        for i in range(0, 15, 3):
            trio = {b.trials[0].label.focus for b in adaptive.blocks[i:i + 3]}
            assert trio == set(Focus)

    def test_timeline_invariants(self, profile):
        cfg = default_config("cj", 8)
        plan = build_cj_session(cfg, profile, 8)
        for trial in plan.resolved_trials():
            tl = trial.timing
            for onset, offset in zip(tl.stimulus_onsets_ms, tl.stimulus_offsets_ms):
                assert offset - onset == 2000
            lo, hi = tl.change_window_ms
            assert 700 <= lo <= 1000
            assert hi - lo == 300
            assert hi <= 2000
            assert tl.response_open_ms == 2000
            assert tl.response_close_ms == 5000
            for stim in trial.stimuli:
                assert stim.change is not None
                assert (stim.change.ramp.up_ms, stim.change.ramp.hold_ms,
                        stim.change.ramp.down_ms) == (100, 100, 100)

    def test_magnitudes_scaled_by_block_percent(self, profile):
        cfg = default_config("cj", 21)
        plan = build_cj_session(cfg, profile, 21)
        adaptive = next(p for p in plan.phases if p.name is PhaseName.ADAPTIVE)
        last = adaptive.blocks[-1]
        assert last.difficulty == 90.0
        for stim in last.trials[0].stimuli:
            assert stim.change.magnitude == pytest.approx(0.2 * 0.9)


class TestPlanDocument:
    def test_round_trip_identity(self, profile):
        for task, builder, args in [
            ("gng", build_gng_session, (profile,)),
            ("pj", build_pj_session, (-80, 120)),
            ("cj", build_cj_session, (profile,)),
        ]:
            cfg = default_config(task, 5)
            plan = builder(cfg, *args, 5)
            doc = plan_to_json(plan)
            again = plan_to_json(plan_from_dict(plan_to_dict(plan)))
            assert doc == again
