/**
 * Client-side clock alignment.
 *
 * The server opens every block with a sync_req carrying its own
 * timestamp t0; we answer with our receive/send stamps t1 and t2 so
 * the server can place our clock. This module keeps the mirror-image
 * estimate on the client: offset_us such that
 *
 *   server_time ~= client_time + offset_us
 *
 * A server-initiated exchange gives us t0 and t1 but never t3, so the
 * raw estimate t0 - t1 is biased low by the one-way flight time. When
 * the transport can measure a round trip (TCP connect latency is a
 * decent proxy on an idle link) we add half of it back; on loopback
 * both terms are microseconds and the estimate lands well inside the
 * 5 ms budget.
 */

export type SyncSample = {
  serverT0Us: number;
  clientT1Us: number;
  clientT2Us: number;
  roundTripHintUs: number;
};

export type ClockSyncState = {
  offsetUs: number;
  roundTripUs: number;
  lastSyncClientUs: number;
  sampleCount: number;
};

export type ClockSync = {
  record: (sample: SyncSample) => ClockSyncState;
  state: () => ClockSyncState | null;
  toServerUs: (clientUs: number) => number;
  toClientUs: (serverUs: number) => number;
  /** Spread between the largest and smallest offset seen so far. */
  driftUs: () => number;
  samples: () => ClockSyncState[];
};

export function createClockSync(): ClockSync {
  const history: ClockSyncState[] = [];

  function record(sample: SyncSample): ClockSyncState {
    const rtt = Math.max(0, sample.roundTripHintUs);
    const next: ClockSyncState = {
      offsetUs: sample.serverT0Us - sample.clientT1Us + Math.round(rtt / 2),
      roundTripUs: rtt,
      lastSyncClientUs: sample.clientT1Us,
      sampleCount: history.length + 1,
    };
    history.push(next);
    return next;
  }

  function state(): ClockSyncState | null {
    return history.length ? history[history.length - 1]! : null;
  }

  function requireState(): ClockSyncState {
    const s = state();
    if (!s) throw new Error("clock not synced yet");
    return s;
  }

  return {
    record,
    state,
    toServerUs: (clientUs) => clientUs + requireState().offsetUs,
    toClientUs: (serverUs) => serverUs - requireState().offsetUs,
    driftUs: () => {
      if (history.length < 2) return 0;
      const offsets = history.map((h) => h.offsetUs);
      return Math.max(...offsets) - Math.min(...offsets);
    },
    samples: () => history.slice(),
  };
}

export type MicrosecondClock = { nowUs: () => number };

/** Monotonic microsecond clock for Node processes. */
export function hrtimeClock(): MicrosecondClock {
  return { nowUs: () => Number(process.hrtime.bigint() / 1000n) };
}
