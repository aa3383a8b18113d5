/**
 * Wire protocol spoken with the session runtime.
 *
 * Frames are length-delimited text: the payload byte count in ASCII
 * decimal, a newline, then one JSON object encoded compactly with
 * sorted keys. Payloads larger than MAX_FRAME_BYTES are rejected on
 * both sides of the link.
 */

export const MAX_FRAME_BYTES = 65536;

export type GapDirection = 0 | 1 | 2 | 3 | 4 | 5 | 6 | 7;
export type Hand = "R" | "L";

export type CueMessage = {
  type: "cue";
  set: number;
  block: number;
  cued: number;
  hand: Hand;
};

export type ShowMessage = {
  type: "show";
  set: number;
  block: number;
  display: number;
  directions: number[];
};

export type ClearMessage = {
  type: "clear";
  set: number;
  block: number;
  display: number;
};

export type SyncRequestMessage = { type: "sync_req"; t0: number };
export type RestMessage = { type: "rest"; seconds: number };
export type EndMessage = { type: "end"; aborted: number };

/** Everything the server may send. Target identity is never on the wire. */
export type ServerMessage =
  | SyncRequestMessage
  | CueMessage
  | ShowMessage
  | ClearMessage
  | RestMessage
  | EndMessage;

export type SyncReplyMessage = { type: "sync"; t0: number; t1: number; t2: number };
export type ReadyMessage = { type: "ready"; client_t_us: number };
export type ResponseMessage = { type: "response"; client_t_us: number; hand: Hand };
export type SkipRestMessage = { type: "skip_rest" };
export type AbortMessage = { type: "abort" };

export type ClientMessage =
  | SyncReplyMessage
  | ReadyMessage
  | ResponseMessage
  | SkipRestMessage
  | AbortMessage;

export class WireError extends Error {}

type JsonValue = null | boolean | number | string | JsonValue[] | { [k: string]: JsonValue };

/** JSON with object keys sorted, no whitespace; mirrors the server encoder. */
export function stableStringify(value: unknown): string {
  if (value === null || typeof value === "boolean" || typeof value === "string") {
    return JSON.stringify(value);
  }
  if (typeof value === "number") {
    if (!Number.isFinite(value)) throw new WireError("non-finite number in message");
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(stableStringify).join(",") + "]";
  }
  if (typeof value === "object") {
    const obj = value as { [k: string]: unknown };
    const parts = Object.keys(obj)
      .sort()
      .filter((k) => obj[k] !== undefined)
      .map((k) => JSON.stringify(k) + ":" + stableStringify(obj[k]));
    return "{" + parts.join(",") + "}";
  }
  throw new WireError(`cannot encode ${typeof value}`);
}

export function encodeMessage(msg: ClientMessage | ServerMessage): Buffer {
  const payload = Buffer.from(stableStringify(msg), "utf-8");
  if (payload.length > MAX_FRAME_BYTES) {
    throw new WireError(`frame payload of ${payload.length} bytes exceeds limit`);
  }
  return Buffer.concat([Buffer.from(String(payload.length) + "\n", "ascii"), payload]);
}

const NL = 0x0a;
const DIGIT_0 = 0x30;
const DIGIT_9 = 0x39;

/**
 * Incremental frame parser. Feed raw socket chunks in arrival order;
 * each call returns the messages completed by that chunk. Tolerates
 * any split points, including mid-header and mid-payload.
 */
export class FrameDecoder {
  private buf: Buffer = Buffer.alloc(0);

  feed(chunk: Buffer): JsonValue[] {
    this.buf = this.buf.length === 0 ? Buffer.from(chunk) : Buffer.concat([this.buf, chunk]);
    const out: JsonValue[] = [];
    for (;;) {
      const nl = this.buf.indexOf(NL);
      if (nl < 0) {
        if (this.buf.length > 7) throw new WireError("frame header too long");
        break;
      }
      if (nl === 0) throw new WireError("empty frame header");
      for (let i = 0; i < nl; i++) {
        const b = this.buf[i];
        if (b < DIGIT_0 || b > DIGIT_9) {
          throw new WireError("frame header is not a decimal length");
        }
      }
      const length = Number(this.buf.subarray(0, nl).toString("ascii"));
      if (length > MAX_FRAME_BYTES) {
        throw new WireError(`frame payload of ${length} bytes exceeds limit`);
      }
      if (this.buf.length < nl + 1 + length) break;
      const payload = this.buf.subarray(nl + 1, nl + 1 + length).toString("utf-8");
      this.buf = Buffer.from(this.buf.subarray(nl + 1 + length));
      let parsed: JsonValue;
      try {
        parsed = JSON.parse(payload) as JsonValue;
      } catch (err) {
        throw new WireError(`frame payload is not valid JSON: ${String(err)}`);
      }
      if (parsed === null || typeof parsed !== "object" || Array.isArray(parsed)) {
        throw new WireError("frame payload is not a JSON object");
      }
      out.push(parsed);
    }
    return out;
  }
}

const TARGET_KEYS = ["is_target", "target_position", "target"];

/**
 * Guard used on every inbound message: the display client must never
 * learn which displays are targets, so any such field is a protocol
 * violation worth failing loudly on.
 */
export function assertNoTargetFields(msg: object): void {
  for (const key of Object.keys(msg)) {
    if (TARGET_KEYS.includes(key)) {
      throw new WireError(`server message leaks target identity via ${key!}`);
    }
  }
}

export function isServerMessage(msg: unknown): msg is ServerMessage {
  if (msg === null || typeof msg !== "object") return false;
  const t = (msg as { type?: unknown }).type;
  return t === "sync_req" || t === "cue" || t === "show" || t === "clear" ||
    t === "rest" || t === "end";
}
