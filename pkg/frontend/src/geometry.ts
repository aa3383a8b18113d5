/**
 * Visual-angle geometry resolved to pixels for one physical display.
 *
 * The session plan states stimulus sizes in degrees at a viewing
 * distance; what lands on screen depends on the panel's pixel pitch,
 * so every client carries its own calibration. Defaults assume the
 * reference rig: a 17-inch 4:3 panel (32.4 cm viewable width) driven
 * at 1280x1024, viewed from 60 cm.
 */

import type { GapDirection } from "./protocol";

export type StimulusGeometry = {
  viewingDistanceCm: number;
  stimulusDiameterDeg: number;
  horizontalSpacingDeg: number;
  gapArcDeg: number;
};

/** Mirrors the plan-file geometry defaults. */
export const DEFAULT_GEOMETRY: StimulusGeometry = {
  viewingDistanceCm: 60.0,
  stimulusDiameterDeg: 2.0,
  horizontalSpacingDeg: 3.0,
  gapArcDeg: 90.0,
};

export type DisplayCalibration = {
  pxPerCm: number;
  viewportWidthPx: number;
  viewportHeightPx: number;
};

export const DEFAULT_CALIBRATION: DisplayCalibration = {
  pxPerCm: 1280 / 32.4,
  viewportWidthPx: 1280,
  viewportHeightPx: 1024,
};

/** ISO/IEC 7810 ID-1 card width, the on-screen calibration reference. */
export const CREDIT_CARD_WIDTH_CM = 8.56;

export function pxPerCmFromCardWidth(measuredCardPx: number): number {
  if (!(measuredCardPx > 0)) throw new Error("card width must be positive");
  return measuredCardPx / CREDIT_CARD_WIDTH_CM;
}

/** Size subtended by `deg` of visual angle, in pixels on this display. */
export function degToPx(deg: number, viewingDistanceCm: number, pxPerCm: number): number {
  return Math.tan((deg * Math.PI) / 180) * viewingDistanceCm * pxPerCm;
}

export type CircleSpec = {
  xPx: number;
  yPx: number;
  /** Outer radius of the ring. */
  radiusPx: number;
  gapDirection: GapDirection;
};

export type RenderSpec = {
  circles: CircleSpec[];
  ringWidthPx: number;
  gapArcDeg: number;
  strokeColor: string;
  backgroundColor: string;
};

export type StimulusColors = { strokeColor: string; backgroundColor: string };

/** High-contrast defaults: light rings on a dark field. */
export const DEFAULT_COLORS: StimulusColors = {
  strokeColor: "#ffffff",
  backgroundColor: "#000000",
};

/**
 * Lay out one display: 1, 3, or 5 rings in a horizontal row centered
 * on the viewport, one gap direction per ring, left to right.
 */
export function layoutDisplay(
  directions: number[],
  geometry: StimulusGeometry = DEFAULT_GEOMETRY,
  calibration: DisplayCalibration = DEFAULT_CALIBRATION,
  colors: StimulusColors = DEFAULT_COLORS,
): RenderSpec {
  const n = directions.length;
  if (n !== 1 && n !== 3 && n !== 5) {
    throw new Error(`display must hold 1, 3, or 5 stimuli, got ${n}`);
  }
  for (const d of directions) {
    if (!Number.isInteger(d) || d < 0 || d > 7) {
      throw new Error(`gap direction out of range: ${d}`);
    }
  }
  const { pxPerCm, viewportWidthPx, viewportHeightPx } = calibration;
  const diameterPx = degToPx(geometry.stimulusDiameterDeg, geometry.viewingDistanceCm, pxPerCm);
  const spacingPx = degToPx(geometry.horizontalSpacingDeg, geometry.viewingDistanceCm, pxPerCm);
  const rowWidthPx = (n - 1) * spacingPx + diameterPx;
  if (rowWidthPx > viewportWidthPx) {
    throw new Error(`row of ${n} stimuli (${rowWidthPx.toFixed(0)} px) exceeds viewport`);
  }
  const cx = viewportWidthPx / 2;
  const cy = viewportHeightPx / 2;
  const circles: CircleSpec[] = directions.map((d, i) => ({
    xPx: cx + (i - (n - 1) / 2) * spacingPx,
    yPx: cy,
    radiusPx: diameterPx / 2,
    gapDirection: d as GapDirection,
  }));
  return {
    circles,
    // Landolt proportions: stroke and gap each one fifth of the diameter
    ringWidthPx: diameterPx / 5,
    gapArcDeg: geometry.gapArcDeg,
    ...colors,
  };
}

/**
 * Canvas angle of a gap center. Direction 0 points up and steps of 1
 * rotate 45 degrees clockwise; canvas angles start at +x and grow
 * clockwise (y axis points down), so up is -pi/2.
 */
export function gapAngleRad(direction: GapDirection): number {
  return (direction * Math.PI) / 4 - Math.PI / 2;
}
