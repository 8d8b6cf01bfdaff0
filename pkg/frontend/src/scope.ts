// Canvas oscilloscope: one lane per channel, min/max column rendering.

import { minMaxDecimate } from "./decimate.js";

export interface ScopeOptions {
  microvoltSpan: number; // fixed +/- scale per lane when autoscale is off
  autoscale: boolean;
  background: string;
  gridColor: string;
  traceColor: string;
}

export const DEFAULT_SCOPE: ScopeOptions = {
  microvoltSpan: 100,
  autoscale: false,
  background: "#10141a",
  gridColor: "#2a3442",
  traceColor: "#53d1b6",
};

/**
 * Draw all channel lanes into the canvas. Each pixel column shows the
 * [min, max] of the samples it covers, so single-sample pulses stay
 * visible at any zoom. Empty traces draw the baseline.
 */
export function renderScope(
  ctx: CanvasRenderingContext2D,
  traces: number[][],
  widthPx: number,
  heightPx: number,
  opts: ScopeOptions = DEFAULT_SCOPE,
): void {
  ctx.fillStyle = opts.background;
  ctx.fillRect(0, 0, widthPx, heightPx);
  const lanes = Math.max(traces.length, 1);
  const laneH = heightPx / lanes;

  for (let ch = 0; ch < lanes; ch++) {
    const mid = laneH * ch + laneH / 2;
    ctx.strokeStyle = opts.gridColor;
    ctx.lineWidth = 1;
    ctx.beginPath();
    ctx.moveTo(0, mid);
    ctx.lineTo(widthPx, mid);
    ctx.stroke();

    const samples = traces[ch] ?? [];
    if (samples.length === 0) continue;

    let span = opts.microvoltSpan;
    if (opts.autoscale) {
      let peak = 1e-9;
      for (const v of samples) {
        const a = Math.abs(v);
        if (a > peak) peak = a;
      }
      span = peak * 1.1;
    }
    const scale = laneH / 2 / span;

    const pairs = minMaxDecimate(samples, widthPx);
    const colW = widthPx / pairs.length;
    ctx.strokeStyle = opts.traceColor;
    ctx.beginPath();
    for (let i = 0; i < pairs.length; i++) {
      const [lo, hi] = pairs[i];
      const x = i * colW + colW / 2;
      // a column is a vertical segment from min to max (at least 1 px)
      const yHi = mid - hi * scale;
      const yLo = mid - lo * scale;
      ctx.moveTo(x, yHi);
      ctx.lineTo(x, Math.max(yLo, yHi + 1));
    }
    ctx.stroke();
  }
}
