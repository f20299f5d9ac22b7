// Pure view-model builders. Everything here is a rearrangement of
// service response fields; no statistic is computed client-side.

import {
  AsmdRow,
  Diagnostics,
  Estimate,
  UnitsResponse,
  WeightRecord,
} from "./types.js";
import { HistoryEntry } from "./store.js";

/**
 * Default scatter axes: the two covariates whose balance constraints
 * carry the largest absolute dual components (summed over the two
 * treatment groups). Entry 0 of each dual vector is the normalization
 * row and is skipped. Returns 0-based covariate indices.
 */
export function defaultAxes(
  lambdaDual: Record<string, number[]>,
  p: number,
): [number, number] {
  const score = new Array<number>(p).fill(0);
  for (const lam of Object.values(lambdaDual)) {
    for (let j = 0; j < p; j += 1) {
      score[j] = (score[j] ?? 0) + Math.abs(lam[j + 1] ?? 0);
    }
  }
  const order = score
    .map((s, j) => [s, j] as const)
    .sort((a, b) => b[0] - a[0])
    .map(([, j]) => j);
  const first = order[0] ?? 0;
  const second = order[1] ?? first;
  return [first, second];
}

export interface ScatterPoint {
  unit: number;
  x: number;
  y: number;
  /** marker area relative to the largest |weight| in view */
  area: number;
  sign: "positive" | "negative" | "zero";
  retained: boolean;
  group: number;
}

export interface ScatterSpec {
  xName: string;
  yName: string;
  points: ScatterPoint[];
  target: { x: number; y: number };
}

export function scatterSpec(
  units: UnitsResponse,
  weights: WeightRecord[],
  axes: [number, number],
  targetMeans: number[],
): ScatterSpec {
  const [ax, ay] = axes;
  let wmax = 0;
  for (const rec of weights) wmax = Math.max(wmax, Math.abs(rec.weight));
  const points = weights.map((rec) => {
    const row = units.x[rec.unit] ?? [];
    return {
      unit: rec.unit,
      x: row[ax] ?? 0,
      y: row[ay] ?? 0,
      area: wmax > 0 ? Math.abs(rec.weight) / wmax : 0,
      sign:
        rec.weight < 0
          ? ("negative" as const)
          : rec.weight > 0
            ? ("positive" as const)
            : ("zero" as const),
      retained: rec.retained,
      group: rec.group,
    };
  });
  return {
    xName: units.covariates[ax] ?? `x${ax + 1}`,
    yName: units.covariates[ay] ?? `x${ay + 1}`,
    points,
    target: { x: targetMeans[ax] ?? 0, y: targetMeans[ay] ?? 0 },
  };
}

export interface AsmdBar {
  basis: number;
  group: string;
  value: number;
}

/** Bars for the weighted groups; unweighted reference rows and
 * zero-variance notes are dropped from the chart. */
export function asmdBars(rows: AsmdRow[]): AsmdBar[] {
  return rows
    .filter((r) => (r.group === "0" || r.group === "1") && r.asmd !== null)
    .map((r) => ({ basis: r.basis, group: r.group, value: r.asmd as number }));
}

export interface EstimateCard {
  tau_hat: number;
  method_tag: string;
  ci_lower: number | null;
  ci_upper: number | null;
  ci_level: number | null;
  variance_heuristic: number | null;
  variance_plugin: number | null;
}

/** Displayed estimate fields, passed through unmodified. */
export function estimateCard(est: Estimate): EstimateCard {
  return {
    tau_hat: est.tau_hat,
    method_tag: est.method_tag,
    ci_lower: est.ci_lower,
    ci_upper: est.ci_upper,
    ci_level: est.ci_level,
    variance_heuristic: est.variance_heuristic,
    variance_plugin: est.variance_plugin,
  };
}

export interface EssGauge {
  group: string;
  ess: number;
  retained: number;
}

export function essGauges(diag: Diagnostics): EssGauge[] {
  return Object.keys(diag.ess)
    .sort()
    .map((g) => ({
      group: g,
      ess: diag.ess[g]!,
      retained: diag.retained[g] ?? 0,
    }));
}

export interface CompareRow {
  id: number;
  profile: string;
  tau_hat: number;
  ci_lower: number | null;
  ci_upper: number | null;
  ess_treated: number;
  ess_control: number;
  retained: number;
}

export function compareRows(entries: HistoryEntry[]): CompareRow[] {
  return entries.map((e) => ({
    id: e.id,
    profile: e.profile.means.map((v) => String(v)).join(", "),
    tau_hat: e.estimate.tau_hat,
    ci_lower: e.estimate.ci_lower,
    ci_upper: e.estimate.ci_upper,
    ess_treated: e.diagnostics.ess["1"] ?? 0,
    ess_control: e.diagnostics.ess["0"] ?? 0,
    retained:
      (e.diagnostics.retained["1"] ?? 0) + (e.diagnostics.retained["0"] ?? 0),
  }));
}

/** CSV of the current weights table, values serialized verbatim. */
export function weightsCsv(records: WeightRecord[]): string {
  const lines = ["unit,study,group,weight,retained"];
  for (const r of records) {
    lines.push(
      `${r.unit},${r.study},${r.group},${String(r.weight)},${r.retained ? 1 : 0}`,
    );
  }
  return lines.join("\n") + "\n";
}
