"""Attribute button presses to displays and compute behavioral metrics.

Every display owns a half-open response window [onset, next onset) within
its block; the last display's window extends soa_max past its onset. The
first press inside a window decides the display's outcome, later presses
are tallied as extras. Presses flagged pre_stimulus at ingestion and
presses falling past the last window never enter the confusion counts but
are reported alongside them.
"""

from __future__ import annotations

import bisect
import statistics
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigError, LogError
from .protocol import (
    CONDITIONS,
    Group,
    HandCondition,
    SessionPlan,
    StimulusCondition,
)
from .runtime import EventKind, EventLog, verify_conformance

OUTCOMES = ("TP", "TN", "FP", "FN")


@dataclass(frozen=True)
class Attribution:
    set_index: int
    block_index: int
    display_index: int
    condition: StimulusCondition
    hand: HandCondition
    is_target: bool
    outcome: str
    rt_s: Optional[float]
    extra_presses: int

    def __post_init__(self) -> None:
        has_rt = self.rt_s is not None
        if has_rt != (self.outcome in ("TP", "FP")):
            raise LogError(f"attribution rt/outcome mismatch: {self.outcome} rt={self.rt_s}")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    precision: Optional[float]  # undefined (None) when tp + fp == 0
    sensitivity: float
    median_rt_s: Optional[float]


@dataclass(frozen=True)
class AttributionResult:
    attributions: tuple[Attribution, ...]
    pre_stimulus_presses: int
    late_presses: int


def attribute_responses(
    log: EventLog, plan: SessionPlan, check: bool = True
) -> AttributionResult:
    """Score a conformant log against its plan, one Attribution per display.

    Callers that have already run verify_conformance on this pair can pass
    check=False to skip the repeated validation scan.
    """
    if check:
        problems = verify_conformance(log, plan)
        if problems:
            raise LogError("log/plan mismatch: " + "; ".join(problems[:5]))

    soa_max_us = plan.timing.soa_max_ms * 1000
    # displays in log order; windows close at the next onset in the same block
    disp = []
    for rec in log.events(EventKind.STIM_ON):
        p = rec.payload
        s = plan.sets[p["set"]]
        disp.append({
            "set": p["set"], "block": p["block"], "display": p["display"],
            "condition": s.condition, "hand": s.hand,
            "is_target": bool(p["is_target"]),
            "onset": rec.t_us, "end": rec.t_us + soa_max_us,
            "presses": [],
        })
    for i in range(len(disp) - 1):
        if (disp[i]["set"], disp[i]["block"]) == (disp[i + 1]["set"], disp[i + 1]["block"]):
            disp[i]["end"] = disp[i + 1]["onset"]

    onsets = [d["onset"] for d in disp]
    pre = late = 0
    for rec in log.events(EventKind.RESPONSE):
        if rec.payload.get("pre_stimulus"):
            pre += 1
            continue
        t = int(rec.payload.get("est_t_us", rec.t_us))
        i = bisect.bisect_right(onsets, t) - 1
        if i < 0:
            pre += 1
            continue
        if t >= disp[i]["end"]:
            late += 1
            continue
        disp[i]["presses"].append(t)

    out = []
    for d in disp:
        presses = sorted(d["presses"])
        if presses:
            rt = (presses[0] - d["onset"]) / 1e6
            outcome = "TP" if d["is_target"] else "FP"
            extra = len(presses) - 1
        else:
            rt = None
            outcome = "FN" if d["is_target"] else "TN"
            extra = 0
        out.append(Attribution(d["set"], d["block"], d["display"], d["condition"],
                               d["hand"], d["is_target"], outcome, rt, extra))
    return AttributionResult(tuple(out), pre, late)


def confusion_and_metrics(
    attributions: tuple[Attribution, ...] | list[Attribution],
    condition: Optional[StimulusCondition] = None,
    hand: Optional[HandCondition] = None,
) -> tuple[ConfusionCounts, MetricSet]:
    """Counts and derived metrics over the selected attributions.

    Hands are pooled unless a hand filter is given. Median RT runs over TP
    response times only; the median of an even-length list is the mean of
    the central pair. Precision is undefined (None) without any press.
    """
    sel = [a for a in attributions
           if (condition is None or a.condition is condition)
           and (hand is None or a.hand is hand)]
    n = {o: sum(1 for a in sel if a.outcome == o) for o in OUTCOMES}
    counts = ConfusionCounts(n["TP"], n["TN"], n["FP"], n["FN"])
    rts = [a.rt_s for a in sel if a.outcome == "TP"]
    return counts, metrics_from_counts(counts, rts)


def metrics_from_counts(counts: ConfusionCounts, rts_s=()) -> MetricSet:
    """Derive accuracy/precision/sensitivity from raw counts.

    accuracy = (tp+tn)/total, precision = tp/(tp+fp) or undefined when no
    press occurred, sensitivity = tp/(tp+fn).
    """
    total = counts.total
    accuracy = (counts.tp + counts.tn) / total if total else 0.0
    predicted = counts.tp + counts.fp
    precision = counts.tp / predicted if predicted else None
    actual = counts.tp + counts.fn
    sensitivity = counts.tp / actual if actual else 0.0
    rts = list(rts_s)
    median_rt = statistics.median(rts) if rts else None
    return MetricSet(accuracy, precision, sensitivity, median_rt)


@dataclass(frozen=True)
class CondScore:
    counts: ConfusionCounts
    metrics: MetricSet
    rts_s: tuple[float, ...]  # TP reaction times in display order


@dataclass(frozen=True)
class ParticipantScore:
    participant: str
    per_condition: dict[StimulusCondition, CondScore]
    per_condition_hand: dict[tuple[StimulusCondition, HandCondition], CondScore]
    pre_stimulus_presses: int
    late_presses: int


def score_participant(
    log: EventLog, plan: SessionPlan, check: bool = True
) -> ParticipantScore:
    """Full per-participant scoring: pooled per condition plus hand breakdown."""
    res = attribute_responses(log, plan, check=check)

    def cond_score(cond, hand=None):
        counts, metrics = confusion_and_metrics(res.attributions, cond, hand)
        rts = tuple(a.rt_s for a in res.attributions
                    if a.condition is cond and (hand is None or a.hand is hand)
                    and a.outcome == "TP")
        return CondScore(counts, metrics, rts)

    per_condition = {c: cond_score(c) for c in CONDITIONS}
    per_hand = {(c, h): cond_score(c, h) for c in CONDITIONS for h in HandCondition}
    return ParticipantScore(log.participant, per_condition, per_hand,
                            res.pre_stimulus_presses, res.late_presses)


METRIC_NAMES = ("tp", "tn", "fp", "fn", "accuracy", "precision", "sensitivity",
                "median_rt_s", "pooled_median_rt_s")


def _metric_value(score: CondScore, name: str) -> Optional[float]:
    c, m = score.counts, score.metrics
    return {
        "tp": float(c.tp), "tn": float(c.tn), "fp": float(c.fp), "fn": float(c.fn),
        "accuracy": m.accuracy, "precision": m.precision,
        "sensitivity": m.sensitivity, "median_rt_s": m.median_rt_s,
    }[name]


def cohort_summary(
    scored: list[tuple[Group, ParticipantScore]],
) -> dict[tuple[Group, StimulusCondition, str], Optional[float]]:
    """Group medians per condition and metric.

    Scalar metrics take the median across participants (None values are
    skipped); pooled_median_rt_s pools every TP reaction time in the group
    before taking one median, matching group-level reaction-time summaries.
    """
    groups = {g for g, _ in scored}
    for g in Group:
        if g not in groups and scored:
            raise ConfigError(f"cohort_summary: empty group {g.value}")
    if not scored:
        raise ConfigError("cohort_summary: no participants")
    out: dict[tuple[Group, StimulusCondition, str], Optional[float]] = {}
    for g in Group:
        members = [s for gg, s in scored if gg is g]
        for cond in CONDITIONS:
            for name in METRIC_NAMES:
                if name == "pooled_median_rt_s":
                    pooled = [rt for s in members for rt in s.per_condition[cond].rts_s]
                    out[(g, cond, name)] = statistics.median(pooled) if pooled else None
                    continue
                vals = [v for s in members
                        if (v := _metric_value(s.per_condition[cond], name)) is not None]
                out[(g, cond, name)] = statistics.median(vals) if vals else None
    return out


def participant_table(
    scored: list[tuple[Group, ParticipantScore]],
) -> list[dict[str, object]]:
    """Long-format rows (participant, group, condition, metric, value)."""
    rows = []
    for g, s in scored:
        for cond in CONDITIONS:
            for name in METRIC_NAMES:
                if name == "pooled_median_rt_s":
                    continue
                rows.append({
                    "participant": s.participant, "group": g.value,
                    "condition": cond.value, "metric": name,
                    "value": _metric_value(s.per_condition[cond], name),
                })
    return rows


def score_to_text(score: ParticipantScore) -> str:
    """Canonical per-participant scoring document."""
    lines = [f"osvs-score 1 participant={score.participant}"]
    lines.append(f"presses pre_stimulus={score.pre_stimulus_presses} late={score.late_presses}")
    for cond in CONDITIONS:
        s = score.per_condition[cond]
        c, m = s.counts, s.metrics
        prec = "undefined" if m.precision is None else f"{m.precision:.6f}"
        med = "none" if m.median_rt_s is None else f"{m.median_rt_s:.6f}"
        lines.append(
            f"condition {cond.value} tp={c.tp} tn={c.tn} fp={c.fp} fn={c.fn} "
            f"accuracy={m.accuracy:.6f} precision={prec} sensitivity={m.sensitivity:.6f} "
            f"median_rt_s={med}"
        )
        for hand in HandCondition:
            hs = score.per_condition_hand[(cond, hand)]
            hc = hs.counts
            lines.append(
                f"condition {cond.value} hand={hand.value} "
                f"tp={hc.tp} tn={hc.tn} fp={hc.fp} fn={hc.fn}"
            )
        rts = " ".join(f"{rt:.6f}" for rt in s.rts_s)
        lines.append(f"condition {cond.value} rts {rts}".rstrip())
    return "\n".join(lines) + "\n"


def cohort_csv(scored: list[tuple[Group, ParticipantScore]]) -> str:
    """CSV consumed by stats and reporting: participant,group,condition,metric,value."""
    rows = participant_table(scored)
    lines = ["participant,group,condition,metric,value"]
    for r in rows:
        v = r["value"]
        val = "" if v is None else f"{v:.6f}"
        lines.append(f"{r['participant']},{r['group']},{r['condition']},{r['metric']},{val}")
    return "\n".join(lines) + "\n"
