"""Domain types and deterministic plan generation for the OSVS task.

A session is a tree: 12 sets (3 stimulus conditions x 2 hands x 2
repetitions, seeded order), 3 blocks per set, 40 displays per block with
exactly 8 targets. All randomness flows from a single 64-bit seed through
one numpy Generator, so a plan is a pure function of (config, seed).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, PlanError

PLAN_FORMAT_HEADER = "osvs-plan 1"


class GapDirection(IntEnum):
    """One of 8 gap orientations spaced 45 degrees apart, clockwise from up."""

    N = 0
    NE = 1
    E = 2
    SE = 3
    S = 4
    SW = 5
    W = 6
    NW = 7

    @property
    def degrees(self) -> int:
        return 45 * int(self)


class StimulusCondition(Enum):
    """Number of simultaneous circles on screen: one, three, or five."""

    P1 = "P1"
    P3 = "P3"
    P5 = "P5"

    @property
    def display_count(self) -> int:
        return {"P1": 1, "P3": 3, "P5": 5}[self.value]


class HandCondition(Enum):
    RIGHT = "R"
    LEFT = "L"


class Group(Enum):
    YOUNG = "young"
    ELDERLY = "elderly"


class Gender(Enum):
    FEMALE = "F"
    MALE = "M"


class Handedness(Enum):
    RIGHT = "R"
    LEFT = "L"


class VisionCorrection(Enum):
    NONE = "none"
    GLASSES = "glasses"
    CONTACTS = "contacts"


CONDITIONS = (StimulusCondition.P1, StimulusCondition.P3, StimulusCondition.P5)
HANDS = (HandCondition.RIGHT, HandCondition.LEFT)

DISPLAYS_PER_BLOCK = 40
TARGETS_PER_BLOCK = 8
BLOCKS_PER_SET = 3
REPETITIONS = (1, 2)


def canonical_set_order() -> list[tuple[StimulusCondition, HandCondition, int]]:
    """The fixed (condition, hand, repetition) list that seeds permute."""
    return [(c, h, r) for c in CONDITIONS for h in HANDS for r in REPETITIONS]


@dataclass(frozen=True)
class TimingConfig:
    """Millisecond schedule parameters for one session.

    Every inter-onset gap is realized as display_duration plus a uniform
    integer delay, so the delay window must sit inside the SOA window.
    """

    display_duration_ms: int = 500
    soa_min_ms: int = 1000
    soa_max_ms: int = 1800
    post_response_delay_min_ms: int = 500
    post_response_delay_max_ms: int = 1300
    cue_lead_ms: int = 500
    inter_block_rest_s: int = 60

    def __post_init__(self) -> None:
        if not 0 < self.display_duration_ms <= self.soa_min_ms <= self.soa_max_ms:
            raise ConfigError(
                "timing: require 0 < display_duration_ms <= soa_min_ms <= soa_max_ms, "
                f"got {self.display_duration_ms}/{self.soa_min_ms}/{self.soa_max_ms}"
            )
        if self.post_response_delay_min_ms > self.post_response_delay_max_ms:
            raise ConfigError("timing: post_response_delay window is empty")
        if self.post_response_delay_min_ms < 0:
            raise ConfigError("timing: post_response_delay_min_ms must be >= 0")
        lo = self.display_duration_ms + self.post_response_delay_min_ms
        hi = self.display_duration_ms + self.post_response_delay_max_ms
        if lo < self.soa_min_ms or hi > self.soa_max_ms:
            raise ConfigError(
                "timing: display_duration_ms + post_response_delay window "
                f"[{lo}, {hi}] must lie inside the SOA window "
                f"[{self.soa_min_ms}, {self.soa_max_ms}]"
            )
        if self.cue_lead_ms < 0:
            raise ConfigError("timing: cue_lead_ms must be >= 0")
        if self.inter_block_rest_s < 0:
            raise ConfigError("timing: inter_block_rest_s must be >= 0")


@dataclass(frozen=True)
class GeometryConfig:
    """Stimulus layout in visual-angle units at a fixed viewing distance.

    Sizes are declared defaults, not measured values; all are configurable.
    The monitor width bounds how many stimuli fit in one horizontal row.
    """

    viewing_distance_cm: float = 60.0
    stimulus_diameter_deg: float = 2.0
    horizontal_spacing_deg: float = 3.0
    gap_arc_deg: float = 90.0
    monitor_width_cm: float = 32.4  # 4:3 17-inch viewable area

    def __post_init__(self) -> None:
        for name in (
            "viewing_distance_cm",
            "stimulus_diameter_deg",
            "horizontal_spacing_deg",
            "gap_arc_deg",
            "monitor_width_cm",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"geometry: {name} must be positive")
        if self.gap_arc_deg >= 360.0:
            raise ConfigError("geometry: gap_arc_deg must be < 360")
        width_deg = self.row_width_deg(5)
        needed_cm = 2.0 * self.viewing_distance_cm * math.tan(math.radians(width_deg / 2.0))
        if needed_cm > self.monitor_width_cm:
            raise ConfigError(
                f"geometry: a row of 5 stimuli spans {needed_cm:.1f} cm at "
                f"{self.viewing_distance_cm} cm viewing distance, wider than the "
                f"{self.monitor_width_cm} cm monitor"
            )

    def row_width_deg(self, count: int) -> float:
        """Angular width of a centered row of `count` stimuli, edge to edge."""
        return (count - 1) * self.horizontal_spacing_deg + self.stimulus_diameter_deg


@dataclass(frozen=True)
class DisplaySpec:
    """One simultaneous presentation of 1/3/5 gap circles."""

    index_in_block: int
    onset_offset_ms: int
    directions: tuple[GapDirection, ...]
    target_position: Optional[int] = None

    @property
    def is_target(self) -> bool:
        return self.target_position is not None


@dataclass(frozen=True)
class BlockPlan:
    cued_direction: GapDirection
    displays: tuple[DisplaySpec, ...]

    @property
    def target_count(self) -> int:
        return sum(1 for d in self.displays if d.is_target)


@dataclass(frozen=True)
class SetSpec:
    condition: StimulusCondition
    hand: HandCondition
    repetition: int
    blocks: tuple[BlockPlan, ...]


@dataclass(frozen=True)
class SessionPlan:
    seed: int
    timing: TimingConfig
    geometry: GeometryConfig
    no_consecutive_targets: bool
    sets: tuple[SetSpec, ...]

    def displays(self) -> Iterable[tuple[SetSpec, int, DisplaySpec]]:
        """Yield (set, block_index, display) over the whole session in order."""
        for s in self.sets:
            for bi, block in enumerate(s.blocks):
                for d in block.displays:
                    yield s, bi, d


@dataclass(frozen=True)
class ParticipantProfile:
    id: str
    group: Group
    age: float
    gender: Gender
    handedness: Handedness
    vision_correction: VisionCorrection
    has_licence: bool
    licence_years: Optional[int] = None

    def __post_init__(self) -> None:
        if self.age <= 0:
            raise ConfigError("participant: age must be positive")
        if not self.has_licence and self.licence_years is not None:
            raise ConfigError("participant: licence_years given without a licence")


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)


def _choose_target_slots(
    n_displays: int, n_targets: int, no_consecutive: bool, rng: np.random.Generator
) -> list[int]:
    """Pick target display indices uniformly, optionally with no two adjacent.

    The constrained draw maps a uniform (n_displays - n_targets + 1 choose
    n_targets) combination through the classic stars-and-bars bijection:
    sort, then add 0..n_targets-1 so gaps of at least one open up.
    """
    if no_consecutive:
        room = n_displays - n_targets + 1
        if room < n_targets:
            raise ConfigError("block: cannot place targets without adjacency")
        base = np.sort(rng.choice(room, size=n_targets, replace=False))
        return [int(b) + i for i, b in enumerate(base)]
    return sorted(int(v) for v in rng.choice(n_displays, size=n_targets, replace=False))


def build_block(
    condition: StimulusCondition,
    cued: GapDirection,
    rng: np.random.Generator,
    timing: Optional[TimingConfig] = None,
    no_consecutive_targets: bool = True,
) -> BlockPlan:
    """Generate one 40-display block for `condition` with `cued` as target gap.

    Draw order is frozen (target slots, then delays, then per-display
    content) so identical generator states give identical blocks.
    """
    timing = timing or TimingConfig()
    k = condition.display_count
    slots = set(
        _choose_target_slots(DISPLAYS_PER_BLOCK, TARGETS_PER_BLOCK, no_consecutive_targets, rng)
    )
    delays = rng.integers(
        timing.post_response_delay_min_ms,
        timing.post_response_delay_max_ms + 1,
        size=DISPLAYS_PER_BLOCK - 1,
    )
    others = [d for d in GapDirection if d != cued]
    displays = []
    onset = 0
    for i in range(DISPLAYS_PER_BLOCK):
        if i > 0:
            onset += timing.display_duration_ms + int(delays[i - 1])
        if i in slots:
            tpos = int(rng.integers(k))
            picks = rng.choice(len(others), size=k - 1, replace=False)
            distractors = iter(others[int(p)] for p in picks)
            dirs = tuple(cued if j == tpos else next(distractors) for j in range(k))
            displays.append(DisplaySpec(i, onset, dirs, tpos))
        else:
            picks = rng.choice(len(others), size=k, replace=False)
            dirs = tuple(others[int(p)] for p in picks)
            displays.append(DisplaySpec(i, onset, dirs, None))
    return BlockPlan(cued_direction=cued, displays=tuple(displays))


def build_session_plan(
    seed: int,
    timing: Optional[TimingConfig] = None,
    geometry: Optional[GeometryConfig] = None,
    no_consecutive_targets: bool = True,
) -> SessionPlan:
    """Build a full 12-set session plan as a pure function of (config, seed)."""
    timing = timing or TimingConfig()
    geometry = geometry or GeometryConfig()
    rng = np.random.default_rng(seed)
    combos = canonical_set_order()
    order = rng.permutation(len(combos))
    sets = []
    for idx in order:
        condition, hand, repetition = combos[int(idx)]
        blocks = []
        for _ in range(BLOCKS_PER_SET):
            cued = GapDirection(int(rng.integers(len(GapDirection))))
            blocks.append(build_block(condition, cued, rng, timing, no_consecutive_targets))
        sets.append(SetSpec(condition, hand, repetition, tuple(blocks)))
    return SessionPlan(
        seed=int(seed),
        timing=timing,
        geometry=geometry,
        no_consecutive_targets=no_consecutive_targets,
        sets=tuple(sets),
    )


def validate_plan(plan: SessionPlan) -> ValidationReport:
    """Check every structural invariant; collects violations, never raises."""
    report = ValidationReport()
    t = plan.timing
    if len(plan.sets) != 12:
        report.add(f"session: {len(plan.sets)} sets, expected 12")
    seen = {}
    for si, s in enumerate(plan.sets):
        key = (s.condition, s.hand, s.repetition)
        seen[key] = seen.get(key, 0) + 1
        if s.repetition not in REPETITIONS:
            report.add(f"set {si}: repetition {s.repetition} not in {REPETITIONS}")
        if len(s.blocks) != BLOCKS_PER_SET:
            report.add(f"set {si}: {len(s.blocks)} blocks, expected {BLOCKS_PER_SET}")
        for bi, block in enumerate(s.blocks):
            _validate_block(report, f"set {si} block {bi}", s.condition, block, t, plan)
    for combo in canonical_set_order():
        n = seen.get(combo, 0)
        if n != 1:
            c, h, r = combo
            report.add(f"session: combination {c.value}/{h.value}/{r} occurs {n} times, expected 1")
    per_cond = {c: [0, 0] for c in CONDITIONS}
    for s in plan.sets:
        if s.condition not in per_cond:
            continue
        for block in s.blocks:
            for d in block.displays:
                per_cond[s.condition][0] += 1
                per_cond[s.condition][1] += 1 if d.is_target else 0
    for c, (nd, nt) in per_cond.items():
        if nd != 480:
            report.add(f"condition {c.value}: {nd} displays, expected 480")
        if nt != 96:
            report.add(f"condition {c.value}: {nt} targets, expected 96")
    return report


def _validate_block(
    report: ValidationReport,
    where: str,
    condition: StimulusCondition,
    block: BlockPlan,
    t: TimingConfig,
    plan: SessionPlan,
) -> None:
    k = condition.display_count
    if len(block.displays) != DISPLAYS_PER_BLOCK:
        report.add(f"{where}: block length != {DISPLAYS_PER_BLOCK} ({len(block.displays)})")
    targets = [d for d in block.displays if d.is_target]
    if len(targets) != TARGETS_PER_BLOCK:
        report.add(f"{where}: targets != {TARGETS_PER_BLOCK} ({len(targets)})")
    prev_onset = None
    prev_target = False
    for d in block.displays:
        dw = f"{where} display {d.index_in_block}"
        if len(d.directions) != k:
            report.add(f"{dw}: {len(d.directions)} directions, expected {k}")
        if len(set(d.directions)) != len(d.directions):
            report.add(f"{dw}: directions not pairwise distinct")
        cued_hits = sum(1 for g in d.directions if g == block.cued_direction)
        if d.is_target:
            tp = d.target_position
            if tp is None or not 0 <= tp < len(d.directions) or d.directions[tp] != block.cued_direction:
                report.add(f"{dw}: target_position does not point at the cued direction")
            if cued_hits != 1:
                report.add(f"{dw}: cued direction appears {cued_hits} times in a target display")
            if prev_target and plan.no_consecutive_targets:
                report.add(f"{dw}: consecutive target displays")
        else:
            if cued_hits != 0:
                report.add(f"{dw}: cued direction present in a nontarget display")
        if prev_onset is not None:
            gap = d.onset_offset_ms - prev_onset
            if not t.soa_min_ms <= gap <= t.soa_max_ms:
                report.add(f"{dw}: onset gap {gap} ms outside [{t.soa_min_ms}, {t.soa_max_ms}]")
            delay = gap - t.display_duration_ms
            if not t.post_response_delay_min_ms <= delay <= t.post_response_delay_max_ms:
                report.add(
                    f"{dw}: implied delay {delay} ms outside "
                    f"[{t.post_response_delay_min_ms}, {t.post_response_delay_max_ms}]"
                )
        elif d.onset_offset_ms < 0:
            report.add(f"{dw}: negative onset offset")
        prev_onset = d.onset_offset_ms
        prev_target = d.is_target


def _fmt_num(x: float) -> str:
    if float(x) == int(x):
        return str(int(x))
    return repr(float(x))


def plan_to_text(plan: SessionPlan) -> str:
    """Serialize a plan to its canonical line-oriented text form.

    Key order and number formatting are fixed so equal plans produce
    byte-identical documents (the document hash identifies the plan).
    """
    t, g = plan.timing, plan.geometry
    lines = [
        PLAN_FORMAT_HEADER,
        f"seed={plan.seed}",
        f"no_consecutive_targets={1 if plan.no_consecutive_targets else 0}",
        (
            "timing"
            f" display_duration_ms={t.display_duration_ms}"
            f" soa_min_ms={t.soa_min_ms}"
            f" soa_max_ms={t.soa_max_ms}"
            f" post_response_delay_min_ms={t.post_response_delay_min_ms}"
            f" post_response_delay_max_ms={t.post_response_delay_max_ms}"
            f" cue_lead_ms={t.cue_lead_ms}"
            f" inter_block_rest_s={t.inter_block_rest_s}"
        ),
        (
            "geometry"
            f" viewing_distance_cm={_fmt_num(g.viewing_distance_cm)}"
            f" stimulus_diameter_deg={_fmt_num(g.stimulus_diameter_deg)}"
            f" horizontal_spacing_deg={_fmt_num(g.horizontal_spacing_deg)}"
            f" gap_arc_deg={_fmt_num(g.gap_arc_deg)}"
            f" monitor_width_cm={_fmt_num(g.monitor_width_cm)}"
        ),
    ]
    for si, s in enumerate(plan.sets):
        lines.append(
            f"set {si} condition={s.condition.value} hand={s.hand.value} repetition={s.repetition}"
        )
        for bi, block in enumerate(s.blocks):
            lines.append(f"block {bi} cued={int(block.cued_direction)}")
            for d in block.displays:
                dirs = ",".join(str(int(x)) for x in d.directions)
                tgt = "-" if d.target_position is None else str(d.target_position)
                lines.append(
                    f"display {d.index_in_block} onset_ms={d.onset_offset_ms} dirs={dirs} target={tgt}"
                )
    return "\n".join(lines) + "\n"


def plan_hash(plan: SessionPlan) -> str:
    # cached on the instance: plans are immutable and hashed repeatedly
    h = plan.__dict__.get("_hash_cache")
    if h is None:
        h = hashlib.sha256(plan_to_text(plan).encode("utf-8")).hexdigest()
        object.__setattr__(plan, "_hash_cache", h)
    return h


def _parse_kv(parts: Sequence[str], lineno: int) -> dict[str, str]:
    out = {}
    for p in parts:
        if "=" not in p:
            raise PlanError(f"line {lineno}: expected key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k] = v
    return out


def parse_plan_text(text: str) -> SessionPlan:
    """Parse the canonical plan document; strict inverse of plan_to_text."""
    lines = text.splitlines()
    if not lines or lines[0] != PLAN_FORMAT_HEADER:
        raise PlanError("plan document missing 'osvs-plan 1' header")
    seed = None
    nct = True
    timing = None
    geometry = None
    sets: list[SetSpec] = []
    cur_set: Optional[dict] = None
    cur_blocks: list[BlockPlan] = []
    cur_block_cued: Optional[GapDirection] = None
    cur_displays: list[DisplaySpec] = []

    def close_block() -> None:
        nonlocal cur_block_cued, cur_displays
        if cur_block_cued is not None:
            cur_blocks.append(BlockPlan(cur_block_cued, tuple(cur_displays)))
            cur_block_cued, cur_displays = None, []

    def close_set() -> None:
        nonlocal cur_set, cur_blocks
        close_block()
        if cur_set is not None:
            sets.append(
                SetSpec(cur_set["condition"], cur_set["hand"], cur_set["repetition"], tuple(cur_blocks))
            )
            cur_set, cur_blocks = None, []

    try:
        for lineno, raw in enumerate(lines[1:], start=2):
            if not raw.strip():
                continue
            parts = raw.split()
            head = parts[0]
            if head == "seed" or raw.startswith("seed="):
                seed = int(raw.split("=", 1)[1])
            elif raw.startswith("no_consecutive_targets="):
                nct = raw.split("=", 1)[1] == "1"
            elif head == "timing":
                kv = _parse_kv(parts[1:], lineno)
                timing = TimingConfig(**{k: int(v) for k, v in kv.items()})
            elif head == "geometry":
                kv = _parse_kv(parts[1:], lineno)
                geometry = GeometryConfig(**{k: float(v) for k, v in kv.items()})
            elif head == "set":
                close_set()
                kv = _parse_kv(parts[2:], lineno)
                cur_set = {
                    "condition": StimulusCondition(kv["condition"]),
                    "hand": HandCondition(kv["hand"]),
                    "repetition": int(kv["repetition"]),
                }
            elif head == "block":
                close_block()
                kv = _parse_kv(parts[2:], lineno)
                cur_block_cued = GapDirection(int(kv["cued"]))
            elif head == "display":
                kv = _parse_kv(parts[2:], lineno)
                dirs = tuple(GapDirection(int(x)) for x in kv["dirs"].split(","))
                tgt = None if kv["target"] == "-" else int(kv["target"])
                cur_displays.append(DisplaySpec(int(parts[1]), int(kv["onset_ms"]), dirs, tgt))
            else:
                raise PlanError(f"line {lineno}: unrecognized record {head!r}")
    except PlanError:
        raise
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        raise PlanError(f"malformed plan document: {exc}") from exc
    close_set()
    if seed is None or timing is None or geometry is None:
        raise PlanError("plan document missing seed, timing, or geometry")
    return SessionPlan(seed, timing, geometry, nct, tuple(sets))
