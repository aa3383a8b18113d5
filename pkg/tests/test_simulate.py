"""Tests for the simulated-participant and cohort models."""

import dataclasses
import math

import numpy as np
import pytest

from osvs.errors import ConfigError, EegError
from osvs.erp import erp_metrics, extract_epochs, eeg_to_bytes, reject_artifacts
from osvs.protocol import (
    Group,
    StimulusCondition,
    TimingConfig,
    build_session_plan,
)
from osvs.runtime import EventKind, verify_conformance
from osvs.scoring import score_participant
from osvs.simulate import (
    BehaviorModel,
    ErpModel,
    build_cohort,
    participant_seeds,
    simulate_participant,
    synthesize_eeg,
)
from osvs.stats import correlate

P1 = StimulusCondition.P1
P3 = StimulusCondition.P3
P5 = StimulusCondition.P5

FLAT_HIT = {"P1": 1.0, "P3": 1.0, "P5": 1.0}
FLAT_RT = {"P1": 0.5, "P3": 0.5, "P5": 0.5}
NO_FA = {"P1": 0.0, "P3": 0.0, "P5": 0.0}


def flat_model(hit=1.0, fa=0.0, rt=0.5, sigma=0.3, lapse=0.0):
    return BehaviorModel(
        age_years=25.0,
        hit_prob={k: hit for k in FLAT_HIT},
        false_alarm_prob={k: fa for k in NO_FA},
        rt_median_s={k: rt for k in FLAT_RT},
        rt_sigma=sigma,
        lapse_prob=lapse,
    )


def p3_subplan(seed=11):
    """Plan restricted to the four P3 sets: 96 targets, 384 nontargets."""
    plan = build_session_plan(seed=seed)
    sets = tuple(s for s in plan.sets if s.condition is P3)
    return dataclasses.replace(plan, sets=sets)


def one_set_plan(seed=11):
    plan = build_session_plan(seed=seed)
    sets = tuple(s for s in plan.sets if s.condition is P3)[:1]
    return dataclasses.replace(plan, sets=sets)


class TestSimulateParticipant:
    def test_perfect_model_scores_clean(self):
        plan = build_session_plan(seed=2)
        log = simulate_participant(plan, flat_model(hit=1.0, fa=0.0), seed=5)
        score = score_participant(log, plan)
        for cond in (P1, P3, P5):
            c = score.per_condition[cond].counts
            assert (c.tp, c.tn, c.fp, c.fn) == (96, 384, 0, 0)

    def test_simulated_logs_conform(self):
        plan = build_session_plan(seed=4)
        model = flat_model(hit=0.8, fa=0.02)
        for seed in range(5):
            log = simulate_participant(plan, model, seed=seed)
            assert verify_conformance(log, plan) == []
            assert not log.aborted

    def test_seed_determinism(self):
        plan = p3_subplan()
        model = flat_model(hit=0.7, fa=0.05)
        a = simulate_participant(plan, model, seed=9)
        b = simulate_participant(plan, model, seed=9)
        c = simulate_participant(plan, model, seed=10)
        assert a.to_text() == b.to_text()
        assert a.to_text() != c.to_text()

    def test_hit_rate_matches_probability(self):
        # Response count equals scored TP when false alarms are off, so the
        # mean over many seeds can be checked cheaply by counting events.
        plan = p3_subplan()
        model = BehaviorModel(
            age_years=25.0,
            hit_prob={"P1": 1.0, "P3": 89 / 96, "P5": 1.0},
            false_alarm_prob=dict(NO_FA),
            rt_median_s=dict(FLAT_RT),
        )
        for seed in range(3):
            log = simulate_participant(plan, model, seed=seed)
            score = score_participant(log, plan)
            assert len(log.events(EventKind.RESPONSE)) == score.per_condition[P3].counts.tp

        total = 0
        n_runs = 10_000
        for seed in range(n_runs):
            log = simulate_participant(plan, model, seed=seed)
            total += len(log.events(EventKind.RESPONSE))
        mean_tp = total / n_runs
        assert abs(mean_tp - 89.0) <= 0.1

    def test_rt_median_recovery(self):
        plan = p3_subplan()
        model = flat_model(hit=1.0, fa=0.0, rt=0.66)
        medians = []
        for seed in range(100):
            log = simulate_participant(plan, model, seed=seed)
            score = score_participant(log, plan)
            medians.append(score.per_condition[P3].metrics.median_rt_s)
        assert abs(np.mean(medians) - 0.66) <= 0.02

    def test_hit_rate_law_of_large_numbers(self):
        plan = p3_subplan()
        p = 0.8
        model = flat_model(hit=p, fa=0.0)
        hits = 0
        trials = 0
        for seed in range(110):
            log = simulate_participant(plan, model, seed=seed)
            score = score_participant(log, plan)
            hits += score.per_condition[P3].counts.tp
            trials += 96
        assert trials > 10_000
        sigma = math.sqrt(p * (1 - p) / trials)
        assert abs(hits / trials - p) <= 3 * sigma

    def test_lapse_prob_reduces_hits(self):
        plan = p3_subplan()
        model = flat_model(hit=1.0, lapse=0.3)
        hits = 0
        trials = 0
        for seed in range(25):
            log = simulate_participant(plan, model, seed=seed)
            hits += score_participant(log, plan).per_condition[P3].counts.tp
            trials += 96
        sigma = math.sqrt(0.7 * 0.3 / trials)
        assert abs(hits / trials - 0.7) <= 3 * sigma

    def test_false_alarm_rate(self):
        plan = p3_subplan()
        p = 0.05
        model = flat_model(hit=0.0, fa=p)
        fps = 0
        trials = 0
        for seed in range(20):
            log = simulate_participant(plan, model, seed=seed)
            fps += score_participant(log, plan).per_condition[P3].counts.fp
            trials += 384
        sigma = math.sqrt(p * (1 - p) / trials)
        assert abs(fps / trials - p) <= 3 * sigma

    def test_responses_fall_inside_windows(self):
        plan = p3_subplan()
        model = flat_model(hit=1.0, fa=0.2, rt=1.2, sigma=0.8)
        log = simulate_participant(plan, model, seed=1)
        score = score_participant(log, plan)
        assert score.pre_stimulus_presses == 0
        # Extreme draws are clipped into the response window, never lost.
        c = score.per_condition[P3].counts
        assert c.tp + c.fn == 96
        assert c.fp + c.tn == 384


class TestBehaviorModelValidation:
    def test_rejects_bad_probability(self):
        with pytest.raises(ConfigError):
            BehaviorModel(25.0, {"P1": 1.5, "P3": 1.0, "P5": 1.0}, NO_FA, FLAT_RT)

    def test_rejects_missing_condition(self):
        with pytest.raises(ConfigError):
            BehaviorModel(25.0, {"P1": 1.0, "P3": 1.0}, NO_FA, FLAT_RT)

    def test_rejects_nonpositive_rt(self):
        with pytest.raises(ConfigError):
            BehaviorModel(25.0, FLAT_HIT, NO_FA, {"P1": 0.0, "P3": 0.5, "P5": 0.5})

    def test_rejects_bad_lapse(self):
        with pytest.raises(ConfigError):
            BehaviorModel(25.0, FLAT_HIT, NO_FA, FLAT_RT, lapse_prob=-0.1)

    def test_rejects_bad_age(self):
        with pytest.raises(ConfigError):
            BehaviorModel(0.0, FLAT_HIT, NO_FA, FLAT_RT)


class TestSynthesizeEeg:
    def test_noise_free_peak_recovery(self):
        plan = one_set_plan()
        log = simulate_participant(plan, flat_model(hit=0.0), seed=0)
        erp = ErpModel(amplitude_uv=8.0, latency_s=0.52, noise_sigma_uv=0.0)
        eeg = synthesize_eeg(log, erp, seed=0)
        epochs = extract_epochs(eeg, log, channel="Pz")
        assert epochs.n_epochs == 24
        m = erp_metrics(epochs)
        assert abs(m.amplitude_uv - 8.0) <= 0.02
        assert abs(m.latency_s - 0.52) <= 0.002

    def test_channel_gains_scale_peak(self):
        plan = one_set_plan()
        log = simulate_participant(plan, flat_model(hit=0.0), seed=0)
        erp = ErpModel(amplitude_uv=8.0, latency_s=0.52, noise_sigma_uv=0.0)
        eeg = synthesize_eeg(log, erp, seed=0)
        frontal = erp_metrics(extract_epochs(eeg, log, channel="Fpz"))
        assert abs(frontal.amplitude_uv - 8.0 * 0.3) <= 0.02

    def test_zero_amplitude_noise_envelope(self):
        # With no signal the measured peak is pure averaged noise; its
        # expected maximum over the search window follows the Gaussian
        # extreme-value envelope sigma_eff * sqrt(2 ln m).
        plan = p3_subplan()
        log = simulate_participant(plan, flat_model(hit=0.0), seed=0)
        erp = ErpModel(amplitude_uv=0.0, latency_s=0.52, noise_sigma_uv=10.0)
        sigma_eff = 10.0 / math.sqrt(96)
        m_window = int(round((0.900 - 0.250) * 500)) + 1
        envelope = sigma_eff * math.sqrt(2 * math.log(m_window))
        for seed in range(3):
            eeg = synthesize_eeg(log, erp, seed=seed)
            epochs = extract_epochs(eeg, log, channel="Pz")
            assert epochs.n_epochs == 96
            m = erp_metrics(epochs)
            assert abs(m.amplitude_uv - envelope) <= 3 * sigma_eff

    def test_eeg_determinism(self):
        plan = one_set_plan()
        log = simulate_participant(plan, flat_model(hit=0.0), seed=0)
        erp = ErpModel(noise_sigma_uv=5.0)
        a = synthesize_eeg(log, erp, seed=7)
        b = synthesize_eeg(log, erp, seed=7)
        c = synthesize_eeg(log, erp, seed=8)
        assert eeg_to_bytes(a) == eeg_to_bytes(b)
        assert eeg_to_bytes(a) != eeg_to_bytes(c)

    def test_noisy_pipeline_runs_clean(self):
        plan = one_set_plan()
        log = simulate_participant(plan, flat_model(hit=0.0), seed=0)
        erp = ErpModel(amplitude_uv=8.0, latency_s=0.52, noise_sigma_uv=10.0)
        eeg = synthesize_eeg(log, erp, seed=3)
        epochs = reject_artifacts(extract_epochs(eeg, log, channel="Pz"))
        m = erp_metrics(epochs)
        assert 0.25 <= m.latency_s <= 0.9

    def test_empty_log_rejected(self):
        from osvs.runtime import EventLog

        log = EventLog("0" * 64, "sim", "1970-01-01T00:00:00Z")
        with pytest.raises(EegError):
            synthesize_eeg(log, ErpModel(), seed=0)

    def test_model_validation(self):
        with pytest.raises(ConfigError):
            ErpModel(width_s=0.0)
        with pytest.raises(ConfigError):
            ErpModel(noise_sigma_uv=-1.0)
        with pytest.raises(ConfigError):
            ErpModel(latency_s=0.0)


class TestBuildCohort:
    def test_shapes_and_ids(self):
        cohort = build_cohort(seed=0)
        assert len(cohort) == 25
        ids = [p.id for p, _, _ in cohort]
        assert len(set(ids)) == 25
        young = [p for p, _, _ in cohort if p.group is Group.YOUNG]
        elderly = [p for p, _, _ in cohort if p.group is Group.ELDERLY]
        assert len(young) == 10 and len(elderly) == 15
        assert ids[:10] == [f"y{i:02d}" for i in range(1, 11)]
        assert ids[10:] == [f"e{i:02d}" for i in range(1, 16)]
        for p in young:
            assert 19 <= p.age <= 30
        for p in elderly:
            assert 61 <= p.age <= 76
            assert p.has_licence and p.licence_years is not None

    def test_group_medians_near_anchors(self):
        cohort = build_cohort(seed=0)
        young = [m for p, m, _ in cohort if p.group is Group.YOUNG]
        elderly = [m for p, m, _ in cohort if p.group is Group.ELDERLY]

        def med(models, key, field):
            return float(np.median([getattr(m, field)[key] for m in models]))

        assert abs(med(young, "P3", "hit_prob") * 96 - 89.0) <= 2.0
        assert abs(med(young, "P5", "hit_prob") * 96 - 64.5) <= 3.0
        assert abs(med(elderly, "P3", "hit_prob") * 96 - 75.0) <= 3.0
        assert abs(med(elderly, "P5", "hit_prob") * 96 - 50.0) <= 3.0
        assert abs(med(young, "P3", "rt_median_s") - 0.56) <= 0.03
        assert abs(med(elderly, "P3", "rt_median_s") - 0.66) <= 0.03

    def test_default_coupling_gives_negative_age_effect(self):
        ok = 0
        for seed in range(10):
            cohort = build_cohort(seed=seed)
            ages = [p.age for p, _, _ in cohort]
            h3 = [m.hit_prob["P3"] for _, m, _ in cohort]
            h5 = [m.hit_prob["P5"] for _, m, _ in cohort]
            r3 = correlate(ages, h3)
            r5 = correlate(ages, h5)
            if r3.rho is not None and r3.rho < 0 and r5.rho is not None and r5.rho < 0:
                ok += 1
        assert ok >= 9

    def test_zero_coupling_removes_age_effect(self):
        ns = 0
        for seed in range(5):
            cohort = build_cohort(coupling=0.0, seed=seed)
            ages = [p.age for p, _, _ in cohort]
            h5 = [m.hit_prob["P5"] for _, m, _ in cohort]
            if not correlate(ages, h5).significant:
                ns += 1
        assert ns >= 4

    def test_erp_models_follow_age(self):
        cohort = build_cohort(seed=1)
        young_amp = [e.amplitude_uv for p, _, e in cohort if p.group is Group.YOUNG]
        eld_amp = [e.amplitude_uv for p, _, e in cohort if p.group is Group.ELDERLY]
        assert np.median(young_amp) > np.median(eld_amp)
        for _, _, e in cohort:
            assert 0.30 <= e.latency_s <= 0.85

    def test_seed_determinism(self):
        a = build_cohort(seed=3)
        b = build_cohort(seed=3)
        assert repr(a) == repr(b)
        c = build_cohort(seed=4)
        assert repr(a) != repr(c)

    def test_rejects_bad_sizes(self):
        with pytest.raises(ConfigError):
            build_cohort(n_young=0)
        with pytest.raises(ConfigError):
            build_cohort(coupling=-2.5)


class TestParticipantSeeds:
    def test_stable_and_distinct(self):
        s0 = participant_seeds(7, 0)
        assert s0 == participant_seeds(7, 0)
        assert len(s0) == 3
        assert participant_seeds(7, 1) != s0
        assert participant_seeds(8, 0) != s0
