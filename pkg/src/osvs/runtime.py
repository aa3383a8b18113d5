"""Session execution: clocks, the authoritative event log, and the runner.

The runner walks a precomputed SessionPlan against an abstract monotonic
clock and a participant port. Responses never alter stimulus timing; they
are ingested whenever they arrive and attributed later by scoring. Under a
virtual clock the whole session replays bit-identically; under a wall
clock the same code paths drive a live UI through the wire transport.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Protocol

from . import __version__
from .errors import LogError
from .protocol import SessionPlan, plan_hash

US_PER_MS = 1000
LOG_FORMAT_HEADER = "osvs-log 1"

# Fallback when a cue is never confirmed; the session proceeds rather than
# hanging on an unresponsive participant.
CUE_ACK_TIMEOUT_US = 120_000_000


class EventKind(Enum):
    SESSION_START = "SessionStart"
    SET_START = "SetStart"
    BLOCK_START = "BlockStart"
    CUE_ON = "CueOn"
    CUE_OFF = "CueOff"
    STIM_ON = "StimOn"
    STIM_OFF = "StimOff"
    RESPONSE = "Response"
    BLOCK_END = "BlockEnd"
    REST_START = "RestStart"
    REST_END = "RestEnd"
    SESSION_END = "SessionEnd"


class Clock(Protocol):
    def now_us(self) -> int: ...


class WallClock:
    """Monotonic wall clock in microseconds, anchored at construction."""

    def __init__(self) -> None:
        self._t0_ns = time.monotonic_ns()
        self.started_utc = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())

    def now_us(self) -> int:
        return (time.monotonic_ns() - self._t0_ns) // 1000

    def sleep_until_us(self, t_us: int) -> None:
        delta = t_us - self.now_us()
        if delta > 0:
            time.sleep(delta / 1e6)


class VirtualClock:
    """Test clock that only moves when told to; never moves backwards."""

    def __init__(self, start_us: int = 0) -> None:
        self._now = int(start_us)
        self.started_utc = "1970-01-01T00:00:00Z"

    def now_us(self) -> int:
        return self._now

    def advance_to(self, t_us: int) -> None:
        if t_us > self._now:
            self._now = int(t_us)

    def advance(self, dt_us: int) -> None:
        self.advance_to(self._now + int(dt_us))


@dataclass(frozen=True)
class EventRecord:
    seq: int
    t_us: int
    kind: EventKind
    payload: dict[str, Any]

    def to_line(self) -> str:
        blob = json.dumps(self.payload, sort_keys=True, separators=(",", ":"))
        return f"{self.seq} {self.t_us} {self.kind.value} {blob}"

    @staticmethod
    def from_line(line: str) -> "EventRecord":
        parts = line.split(" ", 3)
        if len(parts) != 4:
            raise LogError(f"malformed event line: {line!r}")
        try:
            seq, t_us = int(parts[0]), int(parts[1])
            kind = EventKind(parts[2])
            payload = json.loads(parts[3])
        except (ValueError, KeyError) as exc:
            raise LogError(f"malformed event line: {line!r}") from exc
        if not isinstance(payload, dict):
            raise LogError(f"event payload must be an object: {line!r}")
        return EventRecord(seq, t_us, kind, payload)


class EventLog:
    """Append-only record of one session, bound to a plan by its hash."""

    def __init__(self, plan_hash_hex: str, participant: str, started_utc: str,
                 software: str = f"osvs/{__version__}") -> None:
        if any(c.isspace() for c in participant) or not participant:
            raise LogError("participant id must be non-empty without whitespace")
        self.plan_hash = plan_hash_hex
        self.participant = participant
        self.started_utc = started_utc
        self.software = software
        self.records: list[EventRecord] = []

    def append(self, kind: EventKind, t_us: int, payload: Optional[dict[str, Any]] = None) -> EventRecord:
        if self.records and t_us < self.records[-1].t_us:
            raise LogError(
                f"event time went backwards: {t_us} < {self.records[-1].t_us}"
            )
        rec = EventRecord(len(self.records), int(t_us), kind, payload or {})
        self.records.append(rec)
        return rec

    @property
    def aborted(self) -> bool:
        for rec in reversed(self.records):
            if rec.kind is EventKind.SESSION_END:
                return bool(rec.payload.get("aborted", 0))
        return True  # no SessionEnd: the session never finished cleanly

    def events(self, kind: EventKind) -> list[EventRecord]:
        return [r for r in self.records if r.kind is kind]

    def to_text(self) -> str:
        head = (
            f"{LOG_FORMAT_HEADER} plan_hash={self.plan_hash} participant={self.participant} "
            f"started_utc={self.started_utc} software={self.software}"
        )
        return "\n".join([head] + [r.to_line() for r in self.records]) + "\n"

    @staticmethod
    def from_text(text: str) -> "EventLog":
        lines = [ln for ln in text.splitlines() if ln]
        if not lines or not lines[0].startswith(LOG_FORMAT_HEADER + " "):
            raise LogError("log document missing 'osvs-log 1' header")
        fields = dict(p.split("=", 1) for p in lines[0].split(" ")[2:])
        try:
            log = EventLog(fields["plan_hash"], fields["participant"],
                           fields["started_utc"], fields.get("software", ""))
        except KeyError as exc:
            raise LogError(f"log header missing field {exc}") from exc
        prev_t = None
        for i, ln in enumerate(lines[1:]):
            rec = EventRecord.from_line(ln)
            if rec.seq != i:
                raise LogError(f"seq gap: expected {i}, got {rec.seq}")
            if prev_t is not None and rec.t_us < prev_t:
                raise LogError(f"event time went backwards at seq {rec.seq}")
            prev_t = rec.t_us
            log.records.append(rec)
        return log


class PortDisconnected(Exception):
    """Raised by a port when the participant side goes away."""


class ParticipantPort(Protocol):
    """Transport-side contract the runner drives.

    send() pushes a server->client message. recv_until() returns the next
    client message arriving at or before the deadline, advancing the
    session clock to the arrival (virtual) or blocking (wall), or None
    once the deadline is reached. Raises PortDisconnected on hangup.
    """

    def send(self, msg: dict[str, Any]) -> None: ...

    def recv_until(self, deadline_us: int) -> Optional[dict[str, Any]]: ...


class ScriptedPort:
    """Deterministic loopback participant driven by per-display scripts.

    Presses are scheduled reactively: when the runner announces a display
    (`show`), any scripted (rt_us, hand) pairs for that display become
    pending messages at show-time + rt. Cue confirmations arrive
    ready_delay_us after each cue. Message identity: client_t_us equals
    session time (loopback, zero clock offset).
    """

    def __init__(
        self,
        clock: VirtualClock,
        responses: Optional[dict[tuple[int, int, int], list[tuple[int, str]]]] = None,
        ready_delay_us: int = 300_000,
        cue_presses: Optional[dict[tuple[int, int], list[tuple[int, str]]]] = None,
        disconnect_at_us: Optional[int] = None,
        skip_rest: bool = False,
    ) -> None:
        self.clock = clock
        self.responses = responses or {}
        self.ready_delay_us = ready_delay_us
        self.cue_presses = cue_presses or {}
        self.disconnect_at_us = disconnect_at_us
        self.skip_rest = skip_rest
        self.sent: list[dict[str, Any]] = []
        self._pending: list[tuple[int, dict[str, Any]]] = []

    def _push(self, t_us: int, msg: dict[str, Any]) -> None:
        self._pending.append((int(t_us), msg))
        self._pending.sort(key=lambda p: p[0])

    def send(self, msg: dict[str, Any]) -> None:
        self.sent.append(msg)
        now = self.clock.now_us()
        if msg["type"] == "sync_req":
            # loopback: zero transit, zero offset
            self._push(now, {"type": "sync", "t0": msg["t0"], "t1": now, "t2": now})
        elif msg["type"] == "cue":
            key = (msg["set"], msg["block"])
            self._push(now + self.ready_delay_us, {"type": "ready", "client_t_us": now + self.ready_delay_us})
            for off_us, hand in self.cue_presses.get(key, []):
                t = now + self.ready_delay_us + off_us
                self._push(t, {"type": "response", "client_t_us": t, "hand": hand})
        elif msg["type"] == "show":
            key = (msg["set"], msg["block"], msg["display"])
            for rt_us, hand in self.responses.get(key, []):
                t = now + rt_us
                self._push(t, {"type": "response", "client_t_us": t, "hand": hand})
        elif msg["type"] == "rest" and self.skip_rest:
            self._push(now, {"type": "skip_rest"})

    def recv_until(self, deadline_us: int) -> Optional[dict[str, Any]]:
        if self.disconnect_at_us is not None:
            cutoff = min(deadline_us, self._pending[0][0] if self._pending else deadline_us)
            if self.disconnect_at_us <= cutoff:
                self.clock.advance_to(self.disconnect_at_us)
                raise PortDisconnected()
        if self._pending and self._pending[0][0] <= deadline_us:
            t, msg = self._pending.pop(0)
            self.clock.advance_to(t)
            return msg
        self.clock.advance_to(deadline_us)
        return None


@dataclass
class _RunState:
    log: EventLog
    clock: Clock
    port: ParticipantPort
    offset_us: int = 0  # estimated client_clock - session_clock
    in_block: bool = False
    stim_seen_in_block: bool = False
    abort: bool = False


def ingest_response(state: _RunState, raw: dict[str, Any]) -> EventRecord:
    """Log one button press, translating it onto the session clock.

    The record's t_us is the arrival time (keeps the log monotone); the
    offset-corrected press estimate travels in the payload as est_t_us,
    which scoring prefers over arrival.
    """
    arrival = state.clock.now_us()
    client_t = int(raw["client_t_us"])
    payload: dict[str, Any] = {
        "client_t_us": client_t,
        "est_t_us": client_t - state.offset_us,
        "hand": raw.get("hand", "?"),
    }
    if not (state.in_block and state.stim_seen_in_block):
        payload["pre_stimulus"] = 1
    return state.log.append(EventKind.RESPONSE, arrival, payload)


def _poll(state: _RunState, deadline_us: int) -> None:
    """Drain port messages up to deadline, ingesting responses as they come."""
    while True:
        try:
            msg = state.port.recv_until(deadline_us)
        except PortDisconnected:
            state.abort = True
            return
        if msg is None:
            return
        mtype = msg.get("type")
        if mtype == "response":
            ingest_response(state, msg)
        elif mtype == "abort":
            state.abort = True
            return
        # ready / sync / skip_rest outside their windows are ignorable here


def _await_type(state: _RunState, wanted: str, deadline_us: int) -> Optional[dict[str, Any]]:
    while True:
        try:
            msg = state.port.recv_until(deadline_us)
        except PortDisconnected:
            state.abort = True
            return None
        if msg is None:
            return None
        mtype = msg.get("type")
        if mtype == wanted:
            return msg
        if mtype == "response":
            ingest_response(state, msg)
        elif mtype == "abort":
            state.abort = True
            return None


def _sync_clocks(state: _RunState) -> None:
    """Four-timestamp round trip; offset = ((t1-t0)+(t2-t3))/2."""
    t0 = state.clock.now_us()
    state.port.send({"type": "sync_req", "t0": t0})
    msg = _await_type(state, "sync", t0 + 5_000_000)
    if msg is None:
        return
    t3 = state.clock.now_us()
    t1, t2 = int(msg["t1"]), int(msg["t2"])
    state.offset_us = ((t1 - t0) + (t2 - t3)) // 2


def run_session(
    plan: SessionPlan,
    port: ParticipantPort,
    clock: Optional[Clock] = None,
    participant_id: str = "anon",
    cue_mode: str = "confirm",
    cue_duration_ms: int = 2000,
    sync_each_block: bool = True,
    started_utc: Optional[str] = None,
) -> EventLog:
    """Administer a full session and return its event log.

    cue_mode "confirm" holds the cue until the participant acknowledges
    (stimuli begin cue_lead_ms later); "fixed" shows the cue for
    cue_duration_ms instead. A port disconnect aborts the session and the
    partial log is finalized with an `aborted` SessionEnd.
    """
    if cue_mode not in ("confirm", "fixed"):
        raise ValueError(f"unknown cue_mode {cue_mode!r}")
    clock = clock or WallClock()
    if started_utc is None:
        started_utc = getattr(clock, "started_utc", "1970-01-01T00:00:00Z")
    t = plan.timing
    state = _RunState(
        log=EventLog(plan_hash(plan), participant_id, started_utc),
        clock=clock,
        port=port,
    )
    log = state.log
    log.append(EventKind.SESSION_START, clock.now_us(), {"seed": plan.seed})
    n_blocks_total = sum(len(s.blocks) for s in plan.sets)
    block_counter = 0
    for si, s in enumerate(plan.sets):
        if state.abort:
            break
        log.append(EventKind.SET_START, clock.now_us(), {
            "set": si, "condition": s.condition.value,
            "hand": s.hand.value, "repetition": s.repetition,
        })
        for bi, block in enumerate(s.blocks):
            if state.abort:
                break
            block_counter += 1
            state.in_block = True
            state.stim_seen_in_block = False
            log.append(EventKind.BLOCK_START, clock.now_us(), {"set": si, "block": bi})
            if sync_each_block:
                _sync_clocks(state)
            if state.abort:
                break
            cue_t = clock.now_us()
            log.append(EventKind.CUE_ON, cue_t, {
                "set": si, "block": bi, "cued": int(block.cued_direction),
            })
            state.port.send({"type": "cue", "set": si, "block": bi,
                             "cued": int(block.cued_direction), "hand": s.hand.value})
            if cue_mode == "confirm":
                ack = _await_type(state, "ready", cue_t + CUE_ACK_TIMEOUT_US)
                if state.abort:
                    break
                cue_off_payload = {"set": si, "block": bi}
                if ack is None:
                    cue_off_payload["timeout"] = 1
            else:
                _poll(state, cue_t + cue_duration_ms * US_PER_MS)
                if state.abort:
                    break
                cue_off_payload = {"set": si, "block": bi}
            cue_off_t = clock.now_us()
            log.append(EventKind.CUE_OFF, cue_off_t, cue_off_payload)
            base_us = cue_off_t + t.cue_lead_ms * US_PER_MS

            for d in block.displays:
                sched_on = base_us + d.onset_offset_ms * US_PER_MS
                _poll(state, sched_on)
                if state.abort:
                    break
                _maybe_sleep(clock, sched_on)
                state.stim_seen_in_block = True
                log.append(EventKind.STIM_ON, clock.now_us(), {
                    "set": si, "block": bi, "display": d.index_in_block,
                    "directions": [int(g) for g in d.directions],
                    "is_target": d.is_target,
                    "target_position": d.target_position,
                    "scheduled_us": sched_on,
                })
                state.port.send({"type": "show", "set": si, "block": bi,
                                 "display": d.index_in_block,
                                 "directions": [int(g) for g in d.directions]})
                sched_off = sched_on + t.display_duration_ms * US_PER_MS
                _poll(state, sched_off)
                if state.abort:
                    break
                _maybe_sleep(clock, sched_off)
                log.append(EventKind.STIM_OFF, clock.now_us(), {
                    "set": si, "block": bi, "display": d.index_in_block,
                })
                state.port.send({"type": "clear", "set": si, "block": bi,
                                 "display": d.index_in_block})
            if state.abort:
                break
            # keep collecting presses through the last attribution window
            window_end = base_us + block.displays[-1].onset_offset_ms * US_PER_MS \
                + t.soa_max_ms * US_PER_MS
            _poll(state, window_end)
            if state.abort:
                break
            state.in_block = False
            log.append(EventKind.BLOCK_END, clock.now_us(), {"set": si, "block": bi})
            if block_counter < n_blocks_total:
                rest_t = clock.now_us()
                log.append(EventKind.REST_START, rest_t, {})
                state.port.send({"type": "rest", "seconds": t.inter_block_rest_s})
                rest_end = rest_t + t.inter_block_rest_s * 1_000_000
                skipped = _rest_poll(state, rest_end)
                if state.abort:
                    break
                if not skipped:
                    _maybe_sleep(clock, rest_end)
                log.append(EventKind.REST_END, clock.now_us(),
                           {"skipped": 1} if skipped else {})
    state.in_block = False
    end_payload = {"aborted": 1} if state.abort else {}
    log.append(EventKind.SESSION_END, clock.now_us(), end_payload)
    try:
        state.port.send({"type": "end", "aborted": 1 if state.abort else 0})
    except Exception:
        pass
    return log


def _rest_poll(state: _RunState, deadline_us: int) -> bool:
    """Like _poll but honors skip_rest; returns True when the rest was cut."""
    while True:
        try:
            msg = state.port.recv_until(deadline_us)
        except PortDisconnected:
            state.abort = True
            return False
        if msg is None:
            return False
        mtype = msg.get("type")
        if mtype == "skip_rest":
            return True
        if mtype == "response":
            ingest_response(state, msg)
        elif mtype == "abort":
            state.abort = True
            return False


def _maybe_sleep(clock: Clock, t_us: int) -> None:
    sleep = getattr(clock, "sleep_until_us", None)
    if sleep is not None:
        sleep(t_us)
    else:
        advance = getattr(clock, "advance_to", None)
        if advance is not None:
            advance(t_us)


def verify_conformance(log: EventLog, plan: SessionPlan) -> list[str]:
    """Check that a log is a faithful execution (or aborted prefix) of plan."""
    problems: list[str] = []
    if log.plan_hash != plan_hash(plan):
        problems.append("header plan hash does not match plan")
    expected = []
    for si, s in enumerate(plan.sets):
        for bi, block in enumerate(s.blocks):
            for d in block.displays:
                expected.append((si, bi, d))
    stim_ons = log.events(EventKind.STIM_ON)
    if not log.aborted and len(stim_ons) != len(expected):
        problems.append(f"{len(stim_ons)} StimOn records, expected {len(expected)}")
    open_display = None
    seen = 0
    for rec in log.records:
        if rec.kind is EventKind.STIM_ON:
            if open_display is not None:
                problems.append(f"seq {rec.seq}: StimOn while display {open_display} still on")
            if seen >= len(expected):
                problems.append(f"seq {rec.seq}: more StimOn records than planned displays")
                break
            si, bi, d = expected[seen]
            p = rec.payload
            ident = (p.get("set"), p.get("block"), p.get("display"))
            if ident != (si, bi, d.index_in_block):
                problems.append(f"seq {rec.seq}: StimOn order {ident} != plan {(si, bi, d.index_in_block)}")
            if p.get("directions") != [int(g) for g in d.directions]:
                problems.append(f"seq {rec.seq}: directions differ from plan")
            if bool(p.get("is_target")) != d.is_target or p.get("target_position") != d.target_position:
                problems.append(f"seq {rec.seq}: target fields differ from plan")
            open_display = ident
            seen += 1
        elif rec.kind is EventKind.STIM_OFF:
            ident = (rec.payload.get("set"), rec.payload.get("block"), rec.payload.get("display"))
            if open_display is None:
                problems.append(f"seq {rec.seq}: StimOff without matching StimOn")
            elif ident != open_display:
                problems.append(f"seq {rec.seq}: StimOff {ident} does not match open display {open_display}")
            open_display = None
    if open_display is not None and not log.aborted:
        problems.append(f"display {open_display} never turned off")
    return problems


def timing_report(log: EventLog) -> list[int]:
    """Scheduled-vs-actual onset differences in microseconds, one per StimOn."""
    out = []
    for rec in log.events(EventKind.STIM_ON):
        sched = rec.payload.get("scheduled_us")
        if sched is not None:
            out.append(rec.t_us - int(sched))
    return out
