// Affine, invertible map between pad pixels and conditioning values.
// Top-left corresponds to (min, max): c0 grows rightward, c1 grows upward.

export interface Range {
  min: number;
  max: number;
}

export interface PadGeometry {
  width: number;
  height: number;
}

const clamp = (value: number, lo: number, hi: number): number =>
  Math.min(hi, Math.max(lo, value));

export function padToConditioning(
  px: number,
  py: number,
  geom: PadGeometry,
  range: Range,
): [number, number] {
  const span = range.max - range.min;
  const c0 = range.min + (px / geom.width) * span;
  const c1 = range.max - (py / geom.height) * span;
  return [clamp(c0, range.min, range.max), clamp(c1, range.min, range.max)];
}

export function conditioningToPad(
  c0: number,
  c1: number,
  geom: PadGeometry,
  range: Range,
): [number, number] {
  const span = range.max - range.min;
  const px = ((c0 - range.min) / span) * geom.width;
  const py = ((range.max - c1) / span) * geom.height;
  return [clamp(px, 0, geom.width), clamp(py, 0, geom.height)];
}
