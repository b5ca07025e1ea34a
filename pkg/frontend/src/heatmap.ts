// Turn a sweep payload into drawable cells. Pure layout + color logic so
// the canvas painter stays a dumb loop; every number shown comes from the
// server payload, never from local recomputation.

import { FAILED_CELL_COLOR, rampColor } from "./colormap.js";

export interface SweepPayload {
  metric: string;
  c0_axis: number[];
  c1_axis: number[];
  values: (number | null)[][];
  status: string[][];
}

export interface HeatmapCell {
  /** Fractional rect within the pad, origin top-left. */
  x: number;
  y: number;
  w: number;
  h: number;
  color: string;
  failed: boolean;
  value: number | null;
}

export interface HeatmapView {
  cells: HeatmapCell[];
  legendMin: number | null;
  legendMax: number | null;
  /** All finite cells share one value; the legend should say so. */
  degenerate: boolean;
}

export function buildHeatmap(payload: SweepPayload): HeatmapView {
  const nc0 = payload.c0_axis.length;
  const nc1 = payload.c1_axis.length;
  const finite: number[] = [];
  for (const row of payload.values) {
    for (const v of row) {
      if (v !== null && Number.isFinite(v)) finite.push(v);
    }
  }
  const lo = finite.length ? Math.min(...finite) : null;
  const hi = finite.length ? Math.max(...finite) : null;
  const degenerate = lo !== null && hi !== null && lo === hi;

  const cells: HeatmapCell[] = [];
  for (let i = 0; i < nc0; i++) {
    for (let j = 0; j < nc1; j++) {
      const value = payload.values[i]?.[j] ?? null;
      const failed = value === null || !Number.isFinite(value);
      let color = FAILED_CELL_COLOR;
      if (!failed && lo !== null && hi !== null) {
        color = degenerate ? rampColor(0.5) : rampColor((value! - lo) / (hi - lo));
      }
      cells.push({
        // c0 runs left to right, c1 bottom to top (matches the pad map)
        x: i / nc0,
        y: (nc1 - 1 - j) / nc1,
        w: 1 / nc0,
        h: 1 / nc1,
        color,
        failed,
        value: failed ? null : value,
      });
    }
  }
  return { cells, legendMin: lo, legendMax: hi, degenerate };
}

export function paintHeatmap(canvas: HTMLCanvasElement, view: HeatmapView): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (const cell of view.cells) {
    ctx.fillStyle = cell.color;
    ctx.fillRect(
      Math.floor(cell.x * canvas.width),
      Math.floor(cell.y * canvas.height),
      Math.ceil(cell.w * canvas.width),
      Math.ceil(cell.h * canvas.height),
    );
  }
}

export function legendText(view: HeatmapView, metric: string): string {
  if (view.legendMin === null || view.legendMax === null) return `${metric}: no data`;
  if (view.degenerate) return `${metric}: constant ${view.legendMin.toFixed(2)}`;
  return `${metric}: ${view.legendMin.toFixed(2)} .. ${view.legendMax.toFixed(2)}`;
}
