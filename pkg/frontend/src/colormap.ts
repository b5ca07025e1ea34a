// Compact viridis ramp: perceptually ordered, dark low to bright high.

const STOPS: [number, number, number][] = [
  [68, 1, 84],
  [71, 44, 122],
  [59, 81, 139],
  [44, 113, 142],
  [33, 144, 141],
  [39, 173, 129],
  [92, 200, 99],
  [170, 220, 50],
  [253, 231, 37],
];

export const FAILED_CELL_COLOR = "rgb(90,90,90)";

/** Map t in [0, 1] onto the ramp; out-of-range values are clamped. */
export function rampColor(t: number): string {
  if (!Number.isFinite(t)) return FAILED_CELL_COLOR;
  const x = Math.min(1, Math.max(0, t)) * (STOPS.length - 1);
  const i = Math.min(STOPS.length - 2, Math.floor(x));
  const f = x - i;
  const a = STOPS[i]!;
  const b = STOPS[i + 1]!;
  const mix = (u: number, v: number) => Math.round(u + (v - u) * f);
  return `rgb(${mix(a[0], b[0])},${mix(a[1], b[1])},${mix(a[2], b[2])})`;
}
