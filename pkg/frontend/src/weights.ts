/**
 * Geometry for the signed weight bar chart.
 *
 * One bar per feature, value taken verbatim from the fit payload; only the
 * bar length is derived (normalized against the largest magnitude so the
 * dominant weight spans the full half-width).
 */

import type { FitResult } from "./api.js";

export interface WeightBar {
  name: string;
  description: string;
  low: string;
  high: string;
  /** Signed weight exactly as served. */
  value: number;
  /** Bar length as a fraction of the half-width, in [0, 1]. */
  fraction: number;
  positive: boolean;
}

export function weightBars(fit: FitResult): WeightBar[] {
  if (fit.weights.length !== fit.features.length) {
    throw new Error(
      `fit payload mismatch: ${fit.weights.length} weights for ${fit.features.length} features`,
    );
  }
  const maxAbs = Math.max(...fit.weights.map(Math.abs), 0);
  const bars = fit.features.map((feature, i) => {
    const value = fit.weights[i] as number;
    return {
      name: feature.name,
      description: feature.description,
      low: feature.low,
      high: feature.high,
      value,
      fraction: maxAbs === 0 ? 0 : Math.abs(value) / maxAbs,
      positive: value >= 0,
    };
  });
  // largest magnitude first; equal magnitudes keep the payload's order
  return bars
    .map((bar, i) => ({ bar, i }))
    .sort((a, b) => Math.abs(b.bar.value) - Math.abs(a.bar.value) || a.i - b.i)
    .map(({ bar }) => bar);
}
