/**
 * Headless scripted participant for protocol-conformance runs.
 *
 * Connects to a live session server over TCP, answers every sync_req,
 * confirms cues, presses the virtual button on a scripted subset of
 * displays, and records enough client-side evidence (arrival stamps,
 * press stamps, raw messages) to audit the server's log afterwards.
 */

import net from "node:net";

import { createSessionClient, type Transport } from "./client";
import { hrtimeClock, type ClockSyncState } from "./clock";
import type { ServerMessage } from "./protocol";

export type TcpTransportHandle = { transport: Transport; socket: net.Socket };

/** Wrap a connecting TCP socket. Writes made before the connection
 * completes sit in the socket's own queue, so callers can treat the
 * transport as ready immediately. Connect latency doubles as the
 * round-trip hint for clock sync. */
export function connectTcp(host: string, port: number): TcpTransportHandle {
  const startedUs = Number(process.hrtime.bigint() / 1000n);
  const socket = net.connect({ host, port, noDelay: true });
  const transport: Transport = {
    send: (data) => void socket.write(data),
    close: () => socket.end(),
    onData: (cb) => void socket.on("data", cb),
    onClose: (cb) => {
      socket.on("close", cb);
      socket.on("error", () => {});
    },
    roundTripHintUs: 0,
  };
  socket.on("connect", () => {
    transport.roundTripHintUs = Number(process.hrtime.bigint() / 1000n) - startedUs;
  });
  return { transport, socket };
}

export type HeadlessScript = {
  /** Microseconds from show receipt to the press, or null for no press. */
  pressAfterUs: (display: number, set: number, block: number) => number | null;
  readyDelayMs?: number;
  /** Send skip_rest this long after a rest begins; null leaves it alone. */
  skipRestAfterMs?: number | null;
};

export type ShowRecord = {
  set: number;
  block: number;
  display: number;
  arrivalUs: number;
  pressClientUs: number | null;
};

export type HeadlessReport = {
  shows: ShowRecord[];
  messages: ServerMessage[];
  syncStates: ClockSyncState[];
  clockDriftUs: number;
  counts: ReturnType<ReturnType<typeof createSessionClient>["counts"]>;
  frameLogText: string;
  aborted: boolean;
};

export function runHeadlessSession(
  host: string,
  port: number,
  script: HeadlessScript,
): Promise<HeadlessReport> {
  return new Promise((resolve, reject) => {
    const clock = hrtimeClock();
    const { transport, socket } = connectTcp(host, port);
    const messages: ServerMessage[] = [];
    const syncStates: ClockSyncState[] = [];
    const shows: ShowRecord[] = [];
    const byDisplay = new Map<string, ShowRecord>();
    let finished = false;

    const finish = (err?: Error) => {
      if (finished) return;
      finished = true;
      socket.destroy();
      if (err) {
        reject(err);
        return;
      }
      resolve({
        shows,
        messages,
        syncStates,
        clockDriftUs: client.clockSync.driftUs(),
        counts: client.counts(),
        frameLogText: client.frameLogText(),
        aborted: client.aborted(),
      });
    };

    const client = createSessionClient({
      transport,
      clock,
      autoReady: true,
      readyDelayMs: script.readyDelayMs ?? 20,
      hooks: {
        onServerMessage: (msg) => void messages.push(msg),
        onSync: (state) => void syncStates.push(state),
        onShow: ({ set, block, display, arrivalUs }) => {
          const record: ShowRecord = { set, block, display, arrivalUs, pressClientUs: null };
          shows.push(record);
          byDisplay.set(`${set}:${block}:${display}`, record);
          const delayUs = script.pressAfterUs(display, set, block);
          if (delayUs !== null) {
            setTimeout(() => {
              record.pressClientUs = clock.nowUs();
              client.pressButton();
            }, delayUs / 1000);
          }
        },
        onRest: () => {
          const afterMs = script.skipRestAfterMs;
          if (afterMs !== null && afterMs !== undefined) {
            setTimeout(() => client.skipRest(), afterMs);
          }
        },
        onEnd: () => {
          // give the final frames a beat to flush before tearing down
          setTimeout(() => finish(), 50);
        },
      },
    });

    socket.on("error", (err) => finish(err));
    socket.on("close", () => {
      if (client.phase() !== "done") {
        finish(new Error(`server closed the link during ${client.phase()}`));
      } else {
        finish();
      }
    });
  });
}
