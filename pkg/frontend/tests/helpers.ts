import type { Draw2D } from "../src/render";
import type { Scheduler, Transport } from "../src/client";
import type { MicrosecondClock } from "../src/clock";

export type ArcCall = {
  x: number;
  y: number;
  radius: number;
  startAngle: number;
  endAngle: number;
};

const px = (n: number) => {
  const s = n.toFixed(2);
  return s === "-0.00" ? "0.00" : s;
};
const rad = (n: number) => n.toFixed(4);

/** Draw2D implementation that records every call as a readable line,
 * giving rendering tests a stable, inspectable surface. */
export class CommandRecorder implements Draw2D {
  commands: string[] = [];
  arcs: ArcCall[] = [];
  private _lineWidth = 1;
  private _strokeStyle = "";
  private _fillStyle = "";
  private _lineCap = "";

  private record(line: string): void {
    this.commands.push(line);
  }

  get lineWidth(): number {
    return this._lineWidth;
  }
  set lineWidth(v: number) {
    this._lineWidth = v;
    this.record(`lineWidth=${px(v)}`);
  }
  get strokeStyle(): string {
    return this._strokeStyle;
  }
  set strokeStyle(v: string) {
    this._strokeStyle = v;
    this.record(`strokeStyle=${v}`);
  }
  get fillStyle(): string {
    return this._fillStyle;
  }
  set fillStyle(v: string) {
    this._fillStyle = v;
    this.record(`fillStyle=${v}`);
  }
  get lineCap(): string {
    return this._lineCap;
  }
  set lineCap(v: string) {
    this._lineCap = v;
    this.record(`lineCap=${v}`);
  }
  save(): void {
    this.record("save()");
  }
  restore(): void {
    this.record("restore()");
  }
  beginPath(): void {
    this.record("beginPath()");
  }
  arc(x: number, y: number, radius: number, startAngle: number, endAngle: number): void {
    this.arcs.push({ x, y, radius, startAngle, endAngle });
    this.record(`arc(${px(x)},${px(y)},${px(radius)},${rad(startAngle)},${rad(endAngle)})`);
  }
  stroke(): void {
    this.record("stroke()");
  }
  fillRect(x: number, y: number, w: number, h: number): void {
    this.record(`fillRect(${px(x)},${px(y)},${px(w)},${px(h)})`);
  }
  clearRect(x: number, y: number, w: number, h: number): void {
    this.record(`clearRect(${px(x)},${px(y)},${px(w)},${px(h)})`);
  }
}

/** Manual clock + timer wheel so client tests control time exactly. */
export function fakeTime(startUs = 1_000_000) {
  let nowUs = startUs;
  type Pending = { id: number; dueUs: number; cb: () => void };
  let pending: Pending[] = [];
  let nextId = 1;

  const clock: MicrosecondClock = { nowUs: () => nowUs };

  const scheduler: Scheduler = {
    set(delayMs, cb) {
      const id = nextId++;
      pending.push({ id, dueUs: nowUs + Math.round(delayMs * 1000), cb });
      return id;
    },
    clear(id) {
      pending = pending.filter((p) => p.id !== id);
    },
  };

  function advanceUs(deltaUs: number): void {
    const target = nowUs + deltaUs;
    for (;;) {
      const due = pending.filter((p) => p.dueUs <= target).sort((a, b) => a.dueUs - b.dueUs);
      if (due.length === 0) break;
      const next = due[0]!;
      pending = pending.filter((p) => p.id !== next.id);
      nowUs = Math.max(nowUs, next.dueUs);
      next.cb();
    }
    nowUs = target;
  }

  return { clock, scheduler, advanceUs, nowUs: () => nowUs };
}

/** In-memory transport: the test plays the server side directly. */
export function fakeTransport() {
  const sentFrames: Buffer[] = [];
  let dataCb: ((chunk: Buffer) => void) | null = null;
  let closeCb: (() => void) | null = null;
  let closedByClient = false;

  const transport: Transport = {
    send: (data) => void sentFrames.push(Buffer.from(data)),
    close: () => {
      closedByClient = true;
    },
    onData: (cb) => {
      dataCb = cb;
    },
    onClose: (cb) => {
      closeCb = cb;
    },
    roundTripHintUs: 0,
  };

  return {
    transport,
    sentFrames,
    deliver: (bytes: Buffer) => dataCb?.(bytes),
    dropLink: () => closeCb?.(),
    closedByClient: () => closedByClient,
  };
}
