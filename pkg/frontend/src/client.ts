/**
 * Session client: one state machine that speaks the wire protocol,
 * drives the participant view, and stamps every participant action
 * with the local monotonic clock.
 *
 * Everything environmental is injected (transport, clock, animation
 * frames, timers) so the same machine runs under a browser shell, a
 * Node kiosk process, or a test harness with fake time. Messages are
 * handled strictly in arrival order on one event loop.
 */

import { createClockSync, hrtimeClock, type ClockSyncState, type MicrosecondClock } from "./clock";
import {
  assertNoTargetFields,
  encodeMessage,
  FrameDecoder,
  isServerMessage,
  WireError,
  type ClientMessage,
  type GapDirection,
  type Hand,
  type ServerMessage,
} from "./protocol";

export type Transport = {
  send(data: Buffer): void;
  close(): void;
  onData(cb: (chunk: Buffer) => void): void;
  onClose(cb: () => void): void;
  /** Measured link round trip, if the transport knows one (TCP connect). */
  roundTripHintUs?: number;
};

/** What the participant-facing surface must be able to show. */
export type ParticipantView = {
  showCue(direction: GapDirection, hand: Hand): void;
  showDisplay(directions: number[]): void;
  clearDisplay(): void;
  showRest(seconds: number): void;
  showReconnect(): void;
  showDone(aborted: boolean): void;
};

export const NULL_VIEW: ParticipantView = {
  showCue: () => {},
  showDisplay: () => {},
  clearDisplay: () => {},
  showRest: () => {},
  showReconnect: () => {},
  showDone: () => {},
};

export type TimerId = number;
export type Scheduler = {
  set(delayMs: number, cb: () => void): TimerId;
  clear(id: TimerId): void;
};

function timeoutScheduler(): Scheduler {
  const handles = new Map<number, NodeJS.Timeout>();
  let nextId = 1;
  return {
    set(delayMs, cb) {
      const id = nextId++;
      handles.set(id, setTimeout(() => {
        handles.delete(id);
        cb();
      }, delayMs));
      return id;
    },
    clear(id) {
      const h = handles.get(id);
      if (h !== undefined) {
        clearTimeout(h);
        handles.delete(id);
      }
    },
  };
}

export type SessionPhase =
  | "idle"
  | "connected"
  | "cue"
  | "running"
  | "rest"
  | "done"
  | "disconnected";

export type FrameLogEntry = {
  kind: "cue" | "show" | "clear" | "rest";
  display: number | null;
  arrivalUs: number;
  renderedUs: number;
};

export type OperatorFlag = { clientTUs: number; note: string };

export type SessionCounts = {
  syncs: number;
  cues: number;
  displaysShown: number;
  responsesSent: number;
  suppressedPresses: number;
  rests: number;
};

export type ClientHooks = {
  onServerMessage?: (msg: ServerMessage) => void;
  onPhase?: (phase: SessionPhase) => void;
  onShow?: (info: { set: number; block: number; display: number; arrivalUs: number }) => void;
  onRest?: (seconds: number) => void;
  onSync?: (state: ClockSyncState) => void;
  onEnd?: (aborted: boolean) => void;
};

export type SessionClientOptions = {
  transport: Transport;
  clock?: MicrosecondClock;
  view?: ParticipantView;
  scheduler?: Scheduler;
  /** Schedule a paint on the next animation frame. Defaults to an
   * immediate call, which is what a headless client wants. */
  raf?: (cb: (nowUs: number) => void) => void;
  /** Confirm cues without a participant keypress after this delay. */
  autoReady?: boolean;
  readyDelayMs?: number;
  /** Local blank deadline when the clear message goes missing. */
  displayDurationMs?: number;
  hooks?: ClientHooks;
};

export type SessionClient = ReturnType<typeof createSessionClient>;

export function createSessionClient(options: SessionClientOptions) {
  const transport = options.transport;
  const clock = options.clock ?? hrtimeClock();
  const view = options.view ?? NULL_VIEW;
  const scheduler = options.scheduler ?? timeoutScheduler();
  const raf = options.raf ?? ((cb: (nowUs: number) => void) => cb(clock.nowUs()));
  const autoReady = options.autoReady ?? true;
  const readyDelayMs = options.readyDelayMs ?? 0;
  const displayDurationMs = options.displayDurationMs ?? 500;
  const hooks = options.hooks ?? {};

  const decoder = new FrameDecoder();
  const clockSync = createClockSync();
  const frameLog: FrameLogEntry[] = [];
  const flags: OperatorFlag[] = [];
  const counts: SessionCounts = {
    syncs: 0,
    cues: 0,
    displaysShown: 0,
    responsesSent: 0,
    suppressedPresses: 0,
    rests: 0,
  };

  let phase: SessionPhase = "idle";
  let activeHand: Hand | null = null;
  let readySent = false;
  let endedAborted = false;
  let restEndClientUs = 0;
  let restSecondsAnnounced = 0;
  let pendingReadyTimer: TimerId | null = null;
  let pendingClearTimer: TimerId | null = null;

  function setPhase(next: SessionPhase): void {
    if (phase === next) return;
    phase = next;
    hooks.onPhase?.(next);
  }

  function send(msg: ClientMessage): void {
    transport.send(encodeMessage(msg));
  }

  function logFrame(kind: FrameLogEntry["kind"], display: number | null, arrivalUs: number, renderedUs: number): void {
    frameLog.push({ kind, display, arrivalUs, renderedUs });
  }

  function cancelTimer(id: TimerId | null): null {
    if (id !== null) scheduler.clear(id);
    return null;
  }

  function sendReady(): void {
    if (readySent || phase !== "cue") return;
    readySent = true;
    pendingReadyTimer = cancelTimer(pendingReadyTimer);
    send({ type: "ready", client_t_us: clock.nowUs() });
  }

  function scheduleAutoReady(): void {
    if (!autoReady) return;
    pendingReadyTimer = cancelTimer(pendingReadyTimer);
    // an extended rest holds the confirmation back until it runs out
    const holdUs = Math.max(0, restEndClientUs - clock.nowUs());
    const delayMs = Math.max(readyDelayMs, holdUs / 1000);
    pendingReadyTimer = scheduler.set(delayMs, sendReady);
  }

  function handleMessage(msg: ServerMessage, arrivalUs: number): void {
    hooks.onServerMessage?.(msg);
    switch (msg.type) {
      case "sync_req": {
        const t1 = arrivalUs;
        const reply = { type: "sync" as const, t0: msg.t0, t1, t2: clock.nowUs() };
        send(reply);
        counts.syncs += 1;
        const state = clockSync.record({
          serverT0Us: msg.t0,
          clientT1Us: t1,
          clientT2Us: reply.t2,
          roundTripHintUs: transport.roundTripHintUs ?? 0,
        });
        hooks.onSync?.(state);
        if (phase === "idle") setPhase("connected");
        break;
      }
      case "cue": {
        activeHand = msg.hand;
        readySent = false;
        counts.cues += 1;
        setPhase("cue");
        raf((renderedUs) => {
          view.showCue(msg.cued as GapDirection, msg.hand);
          logFrame("cue", null, arrivalUs, renderedUs);
        });
        scheduleAutoReady();
        break;
      }
      case "show": {
        counts.displaysShown += 1;
        setPhase("running");
        pendingClearTimer = cancelTimer(pendingClearTimer);
        raf((renderedUs) => {
          view.showDisplay(msg.directions);
          logFrame("show", msg.display, arrivalUs, renderedUs);
        });
        pendingClearTimer = scheduler.set(displayDurationMs, () => {
          // belt and braces: the server's clear normally lands first
          raf((renderedUs) => {
            view.clearDisplay();
            logFrame("clear", msg.display, clock.nowUs(), renderedUs);
          });
        });
        hooks.onShow?.({ set: msg.set, block: msg.block, display: msg.display, arrivalUs });
        break;
      }
      case "clear": {
        pendingClearTimer = cancelTimer(pendingClearTimer);
        raf((renderedUs) => {
          view.clearDisplay();
          logFrame("clear", msg.display, arrivalUs, renderedUs);
        });
        break;
      }
      case "rest": {
        counts.rests += 1;
        restSecondsAnnounced = msg.seconds;
        restEndClientUs = arrivalUs + msg.seconds * 1_000_000;
        setPhase("rest");
        raf((renderedUs) => {
          view.showRest(msg.seconds);
          logFrame("rest", null, arrivalUs, renderedUs);
        });
        hooks.onRest?.(msg.seconds);
        break;
      }
      case "end": {
        endedAborted = msg.aborted !== 0;
        pendingClearTimer = cancelTimer(pendingClearTimer);
        pendingReadyTimer = cancelTimer(pendingReadyTimer);
        setPhase("done");
        view.showDone(endedAborted);
        hooks.onEnd?.(endedAborted);
        transport.close();
        break;
      }
    }
  }

  transport.onData((chunk) => {
    const arrivalUs = clock.nowUs();
    for (const raw of decoder.feed(chunk)) {
      assertNoTargetFields(raw as object);
      if (!isServerMessage(raw)) {
        throw new WireError(`unexpected server message: ${JSON.stringify(raw)}`);
      }
      handleMessage(raw, arrivalUs);
    }
  });

  transport.onClose(() => {
    if (phase === "done") return;
    pendingClearTimer = cancelTimer(pendingClearTimer);
    pendingReadyTimer = cancelTimer(pendingReadyTimer);
    setPhase("disconnected");
    view.showReconnect();
  });

  /** The participant's button. Meaning depends on where the session is:
   * confirm during a cue, a timestamped response during a block, and a
   * suppressed, operator-flagged press during rest. */
  function pressButton(): void {
    const tUs = clock.nowUs();
    if (phase === "cue") {
      sendReady();
      return;
    }
    if (phase === "rest") {
      counts.suppressedPresses += 1;
      flags.push({ clientTUs: tUs, note: "press suppressed during rest" });
      return;
    }
    if (phase !== "running") return;
    counts.responsesSent += 1;
    send({ type: "response", client_t_us: tUs, hand: activeHand ?? "R" });
  }

  function skipRest(): void {
    if (phase !== "rest") return;
    restEndClientUs = clock.nowUs();
    send({ type: "skip_rest" });
  }

  function extendRest(extraSeconds: number): void {
    if (extraSeconds <= 0) return;
    const base = Math.max(restEndClientUs, clock.nowUs());
    restEndClientUs = base + extraSeconds * 1_000_000;
    flags.push({ clientTUs: clock.nowUs(), note: `rest extended ${extraSeconds} s` });
    if (phase === "cue" && !readySent) scheduleAutoReady();
  }

  function abort(): void {
    send({ type: "abort" });
  }

  function restRemainingS(): number {
    return Math.max(0, (restEndClientUs - clock.nowUs()) / 1_000_000);
  }

  /** Client-side frame journal; the header carries the measured
   * render latency so timing audits start from the artifact itself. */
  function frameLogText(): string {
    const latencies = frameLog
      .map((f) => f.renderedUs - f.arrivalUs)
      .sort((a, b) => a - b);
    const median = latencies.length
      ? latencies[Math.floor(latencies.length / 2)]!
      : 0;
    const lines = [`osvs-ui-frames 1 frames=${frameLog.length} render_latency_us=${median}`];
    for (const f of frameLog) {
      lines.push(`${f.kind} ${f.display === null ? "-" : f.display} ${f.arrivalUs} ${f.renderedUs}`);
    }
    return lines.join("\n") + "\n";
  }

  return {
    pressButton,
    confirmReady: sendReady,
    skipRest,
    extendRest,
    abort,
    phase: () => phase,
    hand: () => activeHand,
    counts: () => ({ ...counts }),
    operatorFlags: () => flags.slice(),
    restRemainingS,
    restSeconds: () => restSecondsAnnounced,
    aborted: () => endedAborted,
    clockSync,
    frameLog: () => frameLog.slice(),
    frameLogText,
  };
}
