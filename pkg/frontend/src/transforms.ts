// Pure view-model helpers. Everything here is a unit transform or a
// verbatim rearrangement of API payloads; no statistics are recomputed.

import type { BeforeAfterPayload, DesignRow, EigPayload, PredictPayload } from "./api.js";

export function tauToDays(tau: number): number {
  return Math.expm1(tau);
}

export function daysToTau(days: number): number {
  return Math.log1p(days);
}

export function formatDays(days: number): string {
  if (days >= 100) return days.toFixed(0);
  if (days >= 10) return days.toFixed(1);
  return days.toFixed(2);
}

export interface PmiPlotData {
  tau: number[];
  density: number[];
  meanTau: number;
  meanDays: number;
  bands: { mass: string; tauLow: number; tauHigh: number; daysLow: number; daysHigh: number }[];
}

/** Plot data for the posterior panel: grid and density pass through
 * unchanged; interval endpoints are labeled in days via expm1 only. */
export function preparePmiPlot(payload: PredictPayload, masses: string[]): PmiPlotData {
  const bands = masses
    .filter((m) => payload.intervals[m] !== undefined)
    .map((m) => {
      const interval = payload.intervals[m]!;
      return {
        mass: m,
        tauLow: interval.tau[0],
        tauHigh: interval.tau[1],
        daysLow: interval.days[0],
        daysHigh: interval.days[1],
      };
    });
  return {
    tau: payload.tau_grid,
    density: payload.density,
    meanTau: payload.mean_tau,
    meanDays: payload.mean_days,
    bands,
  };
}

export interface ScanSeries {
  label: string;
  days: number[];
  eigPerCadaver: number[];
  errorBars: number[];
  bestIndex: number;
}

function conditionLabel(row: DesignRow): string {
  const entries = Object.entries(row.covariate_levels);
  if (entries.length === 0) return "baseline";
  return entries.map(([name, level]) => `${name}=${level}`).join(", ");
}

/** Group scan rows by covariate condition; values are taken verbatim. */
export function prepareScanSeries(payload: EigPayload): ScanSeries[] {
  const groups = new Map<string, DesignRow[]>();
  payload.rows.forEach((row) => {
    const label = conditionLabel(row);
    const bucket = groups.get(label) ?? [];
    bucket.push(row);
    groups.set(label, bucket);
  });
  const best = payload.rows[payload.best_index];
  return [...groups.entries()].map(([label, rows]) => ({
    label,
    days: rows.map((r) => r.observation_day),
    eigPerCadaver: rows.map((r) => r.eig_per_cadaver),
    errorBars: rows.map((r) => r.mc_standard_error / Math.max(r.num_cadavers, 1)),
    bestIndex: best === undefined ? -1 : rows.indexOf(best),
  }));
}

export interface BeforeAfterView {
  name: string;
  grid: number[];
  before: number[];
  after: number[];
  varianceRatio: number;
  identical: boolean;
}

export function prepareBeforeAfter(payload: BeforeAfterPayload): BeforeAfterView[] {
  return payload.target_names.map((name, j) => {
    const before = payload.before_density[j] ?? [];
    const after = payload.after_density[j] ?? [];
    return {
      name,
      grid: payload.grid,
      before,
      after,
      varianceRatio: payload.variance_ratio[j] ?? NaN,
      identical:
        before.length === after.length && before.every((v, i) => v === after[i]),
    };
  });
}

/** Interval bands for nested masses must nest: a smaller mass sits inside
 * a larger one. Used to sanity-check a payload before narrowing a band. */
export function bandsNested(inner: [number, number], outer: [number, number]): boolean {
  return inner[0] >= outer[0] && inner[1] <= outer[1];
}

export function argmax(values: number[]): number {
  let best = -1;
  let bestValue = -Infinity;
  values.forEach((v, i) => {
    if (v > bestValue) {
      best = i;
      bestValue = v;
    }
  });
  return best;
}
