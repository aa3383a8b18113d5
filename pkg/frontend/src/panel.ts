/**
 * Operator panel view-model. Everything an experimenter may see or do
 * during a session, derived purely from client state; the wire never
 * delivers target identity, so none of these fields can contain it.
 */

import type { SessionClient, SessionCounts, SessionPhase, OperatorFlag } from "./client";
import type { ClockSyncState } from "./clock";

export type PanelSnapshot = {
  phase: SessionPhase;
  counts: SessionCounts;
  /** Whole seconds left on the rest countdown, for display. */
  restCountdownS: number;
  restSeconds: number;
  clockOffsetUs: number | null;
  clockRoundTripUs: number | null;
  flags: OperatorFlag[];
  aborted: boolean;
};

export function createOperatorPanel(connect: () => SessionClient) {
  let client: SessionClient | null = null;

  function startSession(): SessionClient {
    if (client === null) client = connect();
    return client;
  }

  function snapshot(): PanelSnapshot {
    if (client === null) {
      return {
        phase: "idle",
        counts: {
          syncs: 0,
          cues: 0,
          displaysShown: 0,
          responsesSent: 0,
          suppressedPresses: 0,
          rests: 0,
        },
        restCountdownS: 0,
        restSeconds: 0,
        clockOffsetUs: null,
        clockRoundTripUs: null,
        flags: [],
        aborted: false,
      };
    }
    const sync: ClockSyncState | null = client.clockSync.state();
    return {
      phase: client.phase(),
      counts: client.counts(),
      restCountdownS: Math.ceil(client.restRemainingS()),
      restSeconds: client.restSeconds(),
      clockOffsetUs: sync ? sync.offsetUs : null,
      clockRoundTripUs: sync ? sync.roundTripUs : null,
      flags: client.operatorFlags(),
      aborted: client.aborted(),
    };
  }

  return {
    startSession,
    snapshot,
    skipRest: () => client?.skipRest(),
    extendRest: (extraSeconds: number) => client?.extendRest(extraSeconds),
    abortSession: () => client?.abort(),
    confirmReady: () => client?.confirmReady(),
  };
}
