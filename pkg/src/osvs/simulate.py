"""Synthetic participants: behavior, cohorts, and forward EEG.

Behavior is a per-condition Bernoulli hit/false-alarm model with
log-normal reaction times parameterized by their median, so published
medians plug in directly. Cohorts interpolate group anchor values
between the young and elderly mean ages: linearly on logit(hit
probability) and logit(false-alarm probability), linearly on log(median
RT). A cohort's spread comes from per-participant offsets; the elderly
group gets a fixed share of large-offset outliers (half up, half down)
to reproduce the heavy individual scatter without dragging the group
medians. EEG synthesis adds a Gaussian bump after every target onset on
top of white noise, scaled per channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .erp import DEFAULT_CHANNELS, EegRecording
from .errors import ConfigError, EegError
from .protocol import (
    Gender,
    Group,
    Handedness,
    ParticipantProfile,
    SessionPlan,
    VisionCorrection,
)
from .runtime import EventKind, EventLog, ScriptedPort, VirtualClock, run_session

CONDITION_LABELS = ("P1", "P3", "P5")
US_PER_MS = 1000

DEFAULT_CHANNEL_GAINS: Mapping[str, float] = {
    "Fpz": 0.3, "Fz": 0.5, "Cz": 0.8, "Pz": 1.0, "Oz": 0.6,
}

# Group anchor values: medians at the mean group ages.
YOUNG_MEAN_AGE = 23.1
YOUNG_AGE_SD = 2.9
ELDERLY_MEAN_AGE = 68.7
ELDERLY_AGE_SD = 3.0
YOUNG_AGE_RANGE = (19.0, 30.0)
ELDERLY_AGE_RANGE = (61.0, 76.0)

HIT_ANCHORS = {
    Group.YOUNG: {"P1": 96.0 / 96.0, "P3": 89.0 / 96.0, "P5": 64.5 / 96.0},
    Group.ELDERLY: {"P1": 96.0 / 96.0, "P3": 75.0 / 96.0, "P5": 50.0 / 96.0},
}
RT_ANCHORS_S = {
    Group.YOUNG: {"P1": 0.39, "P3": 0.56, "P5": 0.63},
    Group.ELDERLY: {"P1": 0.50, "P3": 0.66, "P5": 0.68},
}
FA_ANCHORS = {
    Group.YOUNG: {"P1": 1.0 / 384.0, "P3": 3.5 / 384.0, "P5": 6.5 / 384.0},
    Group.ELDERLY: {"P1": 2.0 / 384.0, "P3": 7.0 / 384.0, "P5": 6.0 / 384.0},
}
ERP_AMPLITUDE_ANCHOR_UV = {Group.YOUNG: 8.2, Group.ELDERLY: 3.3}
ERP_LATENCY_ANCHOR_S = {Group.YOUNG: 0.60, Group.ELDERLY: 0.64}

# Spread parameters (declared; per-trial RT variance is unpublished).
ABILITY_SD = 0.08            # logit units, regular participants
OUTLIER_MAGNITUDE_SD = 1.6   # logit units, elderly outliers
OUTLIER_MAGNITUDE_FLOOR = 0.8
OUTLIER_SHARE = 0.4          # fraction of the elderly group
RT_JITTER_SD = 0.04          # log units, per participant
RT_SIGMA_DEFAULT = 0.30      # log units, per trial
FA_JITTER_SD = 0.2           # logit units
ERP_AMP_JITTER_SD = 0.2      # log units
ERP_LAT_JITTER_SD = 0.02     # seconds

HIT_PROB_CLIP = (0.001, 0.999)
FA_PROB_CLIP = (0.0005, 0.15)


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def _check_prob_map(name: str, probs: Mapping[str, float]) -> None:
    for cond in CONDITION_LABELS:
        if cond not in probs:
            raise ConfigError(f"{name} missing condition {cond}")
        if not 0.0 <= probs[cond] <= 1.0:
            raise ConfigError(f"{name}[{cond}]={probs[cond]} outside [0, 1]")


@dataclass(frozen=True)
class BehaviorModel:
    age_years: float
    hit_prob: Mapping[str, float]
    false_alarm_prob: Mapping[str, float]
    rt_median_s: Mapping[str, float]
    rt_sigma: float = RT_SIGMA_DEFAULT
    lapse_prob: float = 0.0

    def __post_init__(self) -> None:
        if self.age_years <= 0:
            raise ConfigError("age_years must be positive")
        _check_prob_map("hit_prob", self.hit_prob)
        _check_prob_map("false_alarm_prob", self.false_alarm_prob)
        for cond in CONDITION_LABELS:
            if cond not in self.rt_median_s or self.rt_median_s[cond] <= 0:
                raise ConfigError(f"rt_median_s[{cond}] must be positive")
        if self.rt_sigma < 0:
            raise ConfigError("rt_sigma must be non-negative")
        if not 0.0 <= self.lapse_prob <= 1.0:
            raise ConfigError("lapse_prob outside [0, 1]")


@dataclass(frozen=True)
class ErpModel:
    amplitude_uv: float = 8.0
    latency_s: float = 0.52
    width_s: float = 0.05
    noise_sigma_uv: float = 10.0
    gains: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_CHANNEL_GAINS))

    def __post_init__(self) -> None:
        if self.width_s <= 0:
            raise ConfigError("width_s must be positive")
        if self.noise_sigma_uv < 0:
            raise ConfigError("noise_sigma_uv must be non-negative")
        if self.latency_s <= 0:
            raise ConfigError("latency_s must be positive")


def simulate_participant(
    plan: SessionPlan,
    model: BehaviorModel,
    seed: int,
    participant: str = "sim",
) -> EventLog:
    """Run the plan against a scripted virtual participant.

    Per target display: press with hit_prob*(1-lapse_prob) at onset plus
    a log-normal RT draw, clipped to stay inside the display's response
    window. Per nontarget: press with false_alarm_prob at a uniform time
    in the window. Draws follow display order, one uniform per display
    plus the RT normal or alarm-time uniform when a press happens.
    """
    rng = np.random.default_rng(seed)
    soa_max_us = plan.timing.soa_max_ms * US_PER_MS
    responses: dict[tuple[int, int, int], list[tuple[int, str]]] = {}
    for si, s in enumerate(plan.sets):
        cond = s.condition.value
        hand = s.hand.value
        p_hit = model.hit_prob[cond] * (1.0 - model.lapse_prob)
        p_fa = model.false_alarm_prob[cond]
        median_us = model.rt_median_s[cond] * 1e6
        for bi, block in enumerate(s.blocks):
            onsets = [d.onset_offset_ms for d in block.displays]
            for di, d in enumerate(block.displays):
                if di + 1 < len(onsets):
                    window_us = (onsets[di + 1] - onsets[di]) * US_PER_MS
                else:
                    window_us = soa_max_us
                if d.is_target:
                    if rng.random() < p_hit:
                        rt_us = median_us * math.exp(model.rt_sigma * rng.standard_normal())
                        rt_us = int(min(max(rt_us, 1000), window_us - 1000))
                        responses[(si, bi, d.index_in_block)] = [(rt_us, hand)]
                elif rng.random() < p_fa:
                    t_us = int(rng.integers(1000, window_us - 1000))
                    responses[(si, bi, d.index_in_block)] = [(t_us, hand)]
    clock = VirtualClock()
    port = ScriptedPort(clock, responses=responses)
    return run_session(plan, port, clock=clock, participant_id=participant)


def synthesize_eeg(
    log: EventLog,
    model: ErpModel,
    seed: int,
    rate_hz: float = 500.0,
    channels: tuple[str, ...] = DEFAULT_CHANNELS,
) -> EegRecording:
    """Forward model: white noise plus a target-locked bump on every channel."""
    if not log.records:
        raise EegError("cannot synthesize EEG for an empty log")
    for ch in channels:
        if ch not in model.gains:
            raise ConfigError(f"no gain declared for channel {ch}")
    t_end_us = log.records[-1].t_us
    n = int(math.ceil(t_end_us * rate_hz / 1e6)) + int(1.2 * rate_hz) + 1
    rng = np.random.default_rng(seed)
    if model.noise_sigma_uv > 0:
        samples = rng.normal(0.0, model.noise_sigma_uv, size=(len(channels), n))
    else:
        samples = np.zeros((len(channels), n))
    gains = np.array([model.gains[ch] for ch in channels])
    half_span = 5.0 * model.width_s
    for rec in log.events(EventKind.STIM_ON):
        if not rec.payload["is_target"]:
            continue
        center_s = rec.t_us / 1e6 + model.latency_s
        i0 = max(0, int((center_s - half_span) * rate_hz))
        i1 = min(n, int((center_s + half_span) * rate_hz) + 1)
        t = np.arange(i0, i1) / rate_hz
        bump = model.amplitude_uv * np.exp(-0.5 * ((t - center_s) / model.width_s) ** 2)
        samples[:, i0:i1] += gains[:, None] * bump[None, :]
    return EegRecording(samples.astype(np.float32), rate_hz, 0, channels)


def _interp(young: float, elderly: float, age: float, coupling: float) -> float:
    frac = (age - YOUNG_MEAN_AGE) / (ELDERLY_MEAN_AGE - YOUNG_MEAN_AGE)
    return young + (elderly - young) * frac * coupling


def participant_seeds(master_seed: int, index: int) -> tuple[int, int, int]:
    """Stable (plan, behavior, eeg) sub-seeds for participant #index."""
    state = np.random.SeedSequence([master_seed, index]).generate_state(3)
    return int(state[0]), int(state[1]), int(state[2])


def build_cohort(
    n_young: int = 10,
    n_elderly: int = 15,
    coupling: float = 1.0,
    seed: int = 0,
    noise_sigma_uv: float = 10.0,
) -> tuple[tuple[ParticipantProfile, BehaviorModel, ErpModel], ...]:
    """Draw a cohort whose group medians sit at the anchor values.

    Ages are normal around the group means (clipped to plausible
    ranges). Every performance parameter is interpolated between the
    group anchors at the participant's age, scaled by `coupling`
    (coupling 0 leaves everyone at the young anchors, killing any age
    effect). A fixed share of the elderly group receives large ability
    offsets, balanced up/down so the group median stays put.
    """
    if n_young < 1 or n_elderly < 1:
        raise ConfigError("need at least one participant per group")
    if not 0.0 <= coupling <= 2.0:
        raise ConfigError("coupling must lie in [0, 2]")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))

    n_out = int(round(OUTLIER_SHARE * n_elderly))
    n_up = n_out // 2
    outlier_order = rng.permutation(n_elderly)
    outlier_sign = {int(outlier_order[i]): (1.0 if i < n_up else -1.0)
                    for i in range(n_out)}

    members = []
    specs = [(Group.YOUNG, i, f"y{i + 1:02d}") for i in range(n_young)]
    specs += [(Group.ELDERLY, i, f"e{i + 1:02d}") for i in range(n_elderly)]
    for group, idx, pid in specs:
        if group is Group.YOUNG:
            mean_age, sd_age, lo, hi = YOUNG_MEAN_AGE, YOUNG_AGE_SD, *YOUNG_AGE_RANGE
        else:
            mean_age, sd_age, lo, hi = ELDERLY_MEAN_AGE, ELDERLY_AGE_SD, *ELDERLY_AGE_RANGE
        age = float(np.clip(rng.normal(mean_age, sd_age), lo, hi))

        if group is Group.ELDERLY and idx in outlier_sign:
            ability = outlier_sign[idx] * (
                abs(rng.normal(0.0, OUTLIER_MAGNITUDE_SD)) + OUTLIER_MAGNITUDE_FLOOR
            )
        else:
            ability = rng.normal(0.0, ABILITY_SD)
        rt_jitter = rng.normal(0.0, RT_JITTER_SD)
        fa_jitter = rng.normal(0.0, FA_JITTER_SD)
        amp_jitter = rng.normal(0.0, ERP_AMP_JITTER_SD)
        lat_jitter = rng.normal(0.0, ERP_LAT_JITTER_SD)

        hit = {}
        fa = {}
        rt = {}
        for cond in CONDITION_LABELS:
            py = min(HIT_ANCHORS[Group.YOUNG][cond], HIT_PROB_CLIP[1])
            pe = min(HIT_ANCHORS[Group.ELDERLY][cond], HIT_PROB_CLIP[1])
            logit_p = _interp(_logit(py), _logit(pe), age, coupling) + ability
            hit[cond] = float(np.clip(_sigmoid(logit_p), *HIT_PROB_CLIP))

            fy = FA_ANCHORS[Group.YOUNG][cond]
            fe = FA_ANCHORS[Group.ELDERLY][cond]
            logit_f = _interp(_logit(fy), _logit(fe), age, coupling) + fa_jitter
            fa[cond] = float(np.clip(_sigmoid(logit_f), *FA_PROB_CLIP))

            ry = RT_ANCHORS_S[Group.YOUNG][cond]
            re = RT_ANCHORS_S[Group.ELDERLY][cond]
            rt[cond] = float(math.exp(
                _interp(math.log(ry), math.log(re), age, coupling) + rt_jitter
            ))

        amplitude = _interp(ERP_AMPLITUDE_ANCHOR_UV[Group.YOUNG],
                            ERP_AMPLITUDE_ANCHOR_UV[Group.ELDERLY], age, coupling)
        amplitude = max(0.5, amplitude * math.exp(amp_jitter))
        latency = _interp(ERP_LATENCY_ANCHOR_S[Group.YOUNG],
                          ERP_LATENCY_ANCHOR_S[Group.ELDERLY], age, coupling)
        latency = float(np.clip(latency + lat_jitter, 0.30, 0.85))

        profile = ParticipantProfile(
            id=pid, group=group, age=int(round(age)),
            gender=Gender.FEMALE if idx % 2 == 0 else Gender.MALE,
            handedness=Handedness.RIGHT,
            vision_correction=VisionCorrection.NONE if group is Group.YOUNG
            else VisionCorrection.GLASSES,
            has_licence=group is Group.ELDERLY,
            licence_years=max(1, int(age - 20)) if group is Group.ELDERLY else None,
        )
        behavior = BehaviorModel(age, hit, fa, rt)
        erp = ErpModel(amplitude_uv=amplitude, latency_s=latency,
                       noise_sigma_uv=noise_sigma_uv)
        members.append((profile, behavior, erp))
    return tuple(members)
