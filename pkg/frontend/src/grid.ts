// The verifier scores on an 11-point grid; human scores live on the
// same grid so the calibration columns are comparable.

export const GRID: readonly number[] = [
  0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0,
];

export const DIMENSIONS = [
  "insight",
  "validity",
  "completeness",
  "clarity",
] as const;

export type Dimension = (typeof DIMENSIONS)[number];

/** Nearest grid value; ties round up, inputs clamp into [0, 1]. */
export function snapToGrid(value: number): number {
  if (!Number.isFinite(value)) return 0;
  const clamped = Math.min(1, Math.max(0, value));
  return Math.round(clamped * 10) / 10;
}

export type ScoreSlots = [number | null, number | null, number | null, number | null];

export function emptySlots(): ScoreSlots {
  return [null, null, null, null];
}

export function allSet(slots: ScoreSlots): slots is [number, number, number, number] {
  return slots.every((s) => s !== null);
}
