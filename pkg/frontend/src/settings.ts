/**
 * Client configuration: where the session server lives and how this
 * particular panel maps centimeters to pixels. The shell persists it
 * as JSON; everything here validates and fills defaults so a partial
 * or stale blob can't put the client in a nonsense state.
 */

import {
  CREDIT_CARD_WIDTH_CM,
  DEFAULT_CALIBRATION,
  DEFAULT_GEOMETRY,
  pxPerCmFromCardWidth,
  type DisplayCalibration,
  type StimulusGeometry,
} from "./geometry";

export type ClientSettings = {
  serverHost: string;
  serverPort: number;
  participantId: string;
  calibration: DisplayCalibration;
  geometry: StimulusGeometry;
  /** Fallback blank deadline if the clear message never arrives. */
  displayDurationMs: number;
};

export const DEFAULT_SETTINGS: ClientSettings = {
  serverHost: "127.0.0.1",
  serverPort: 8750,
  participantId: "anon",
  calibration: DEFAULT_CALIBRATION,
  geometry: DEFAULT_GEOMETRY,
  displayDurationMs: 500,
};

export class SettingsError extends Error {}

/** Apply an on-screen credit-card measurement to the calibration. */
export function calibrateFromCard(settings: ClientSettings, measuredCardPx: number): ClientSettings {
  return {
    ...settings,
    calibration: {
      ...settings.calibration,
      pxPerCm: pxPerCmFromCardWidth(measuredCardPx),
    },
  };
}

/** Pixels a correctly calibrated card outline should span. */
export function cardWidthPx(settings: ClientSettings): number {
  return settings.calibration.pxPerCm * CREDIT_CARD_WIDTH_CM;
}

function asFiniteNumber(value: unknown, fallback: number): number {
  return typeof value === "number" && Number.isFinite(value) ? value : fallback;
}

export function parseSettings(jsonText: string): ClientSettings {
  let raw: unknown;
  try {
    raw = JSON.parse(jsonText);
  } catch (err) {
    throw new SettingsError(`settings are not valid JSON: ${String(err)}`);
  }
  if (raw === null || typeof raw !== "object" || Array.isArray(raw)) {
    throw new SettingsError("settings must be a JSON object");
  }
  const obj = raw as Record<string, unknown>;
  const cal = (obj.calibration ?? {}) as Record<string, unknown>;
  const geo = (obj.geometry ?? {}) as Record<string, unknown>;
  const settings: ClientSettings = {
    serverHost: typeof obj.serverHost === "string" && obj.serverHost !== ""
      ? obj.serverHost
      : DEFAULT_SETTINGS.serverHost,
    serverPort: asFiniteNumber(obj.serverPort, DEFAULT_SETTINGS.serverPort),
    participantId: typeof obj.participantId === "string" && obj.participantId !== ""
      ? obj.participantId
      : DEFAULT_SETTINGS.participantId,
    calibration: {
      pxPerCm: asFiniteNumber(cal.pxPerCm, DEFAULT_CALIBRATION.pxPerCm),
      viewportWidthPx: asFiniteNumber(cal.viewportWidthPx, DEFAULT_CALIBRATION.viewportWidthPx),
      viewportHeightPx: asFiniteNumber(cal.viewportHeightPx, DEFAULT_CALIBRATION.viewportHeightPx),
    },
    geometry: {
      viewingDistanceCm: asFiniteNumber(geo.viewingDistanceCm, DEFAULT_GEOMETRY.viewingDistanceCm),
      stimulusDiameterDeg: asFiniteNumber(geo.stimulusDiameterDeg, DEFAULT_GEOMETRY.stimulusDiameterDeg),
      horizontalSpacingDeg: asFiniteNumber(geo.horizontalSpacingDeg, DEFAULT_GEOMETRY.horizontalSpacingDeg),
      gapArcDeg: asFiniteNumber(geo.gapArcDeg, DEFAULT_GEOMETRY.gapArcDeg),
    },
    displayDurationMs: asFiniteNumber(obj.displayDurationMs, DEFAULT_SETTINGS.displayDurationMs),
  };
  validateSettings(settings);
  return settings;
}

export function serializeSettings(settings: ClientSettings): string {
  validateSettings(settings);
  return JSON.stringify(settings, null, 2) + "\n";
}

export function validateSettings(s: ClientSettings): void {
  if (!Number.isInteger(s.serverPort) || s.serverPort < 1 || s.serverPort > 65535) {
    throw new SettingsError(`server port out of range: ${s.serverPort}`);
  }
  const positives: Array<[string, number]> = [
    ["calibration.pxPerCm", s.calibration.pxPerCm],
    ["calibration.viewportWidthPx", s.calibration.viewportWidthPx],
    ["calibration.viewportHeightPx", s.calibration.viewportHeightPx],
    ["geometry.viewingDistanceCm", s.geometry.viewingDistanceCm],
    ["geometry.stimulusDiameterDeg", s.geometry.stimulusDiameterDeg],
    ["geometry.horizontalSpacingDeg", s.geometry.horizontalSpacingDeg],
    ["geometry.gapArcDeg", s.geometry.gapArcDeg],
    ["displayDurationMs", s.displayDurationMs],
  ];
  for (const [name, value] of positives) {
    if (!(value > 0)) throw new SettingsError(`${name} must be positive, got ${value}`);
  }
  if (s.geometry.gapArcDeg >= 360) {
    throw new SettingsError("gap arc must leave some ring to draw");
  }
}
