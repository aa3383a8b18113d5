/**
 * Stimulus painting. Works against the subset of the 2D canvas API it
 * actually uses, so tests can substitute a command recorder and the
 * browser can pass a real CanvasRenderingContext2D unchanged.
 */

import { gapAngleRad, type RenderSpec } from "./geometry";

export interface Draw2D {
  lineWidth: number;
  strokeStyle: string;
  fillStyle: string;
  lineCap: string;
  save(): void;
  restore(): void;
  beginPath(): void;
  arc(x: number, y: number, radius: number, startAngle: number, endAngle: number): void;
  stroke(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  clearRect(x: number, y: number, w: number, h: number): void;
}

const TWO_PI = Math.PI * 2;

export class StimulusRenderer {
  private context: Draw2D;
  private width: number;
  private height: number;
  frameNumber = 0;

  constructor(context: Draw2D, widthPx: number, heightPx: number) {
    this.context = context;
    this.width = widthPx;
    this.height = heightPx;
  }

  /** Paint a full search display. One stroked arc per ring; the
   * un-stroked span is the gap, centered on the cued-or-not direction. */
  drawDisplay(spec: RenderSpec): void {
    const ctx = this.context;
    ctx.save();
    this.paintBackground(spec.backgroundColor);
    ctx.lineWidth = spec.ringWidthPx;
    ctx.strokeStyle = spec.strokeColor;
    ctx.lineCap = "butt";
    const halfGap = ((spec.gapArcDeg / 2) * Math.PI) / 180;
    for (const circle of spec.circles) {
      const gapCenter = gapAngleRad(circle.gapDirection);
      ctx.beginPath();
      // stroke centerline sits half the ring width inside the outer edge
      ctx.arc(
        circle.xPx,
        circle.yPx,
        circle.radiusPx - spec.ringWidthPx / 2,
        gapCenter + halfGap,
        gapCenter + TWO_PI - halfGap,
      );
      ctx.stroke();
    }
    ctx.restore();
    this.frameNumber += 1;
  }

  clear(backgroundColor = "#000000"): void {
    this.context.save();
    this.paintBackground(backgroundColor);
    this.context.restore();
    this.frameNumber += 1;
  }

  private paintBackground(color: string): void {
    this.context.clearRect(0, 0, this.width, this.height);
    this.context.fillStyle = color;
    this.context.fillRect(0, 0, this.width, this.height);
  }
}
