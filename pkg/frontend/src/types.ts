// Response shapes of the estimation service, validated at the edge so
// the rest of the app works with trustworthy data.

import { z } from "zod";

export const CovariateStats = z.object({
  min: z.number(),
  max: z.number(),
  mean: z.number(),
  sd: z.number(),
});

export const DatasetSummary = z.object({
  kind: z.string(),
  n: z.number().optional(),
  m: z.number(),
  covariates: z.record(CovariateStats),
  study_sizes: z.record(z.number()),
  arm_counts: z
    .array(
      z.object({
        study: z.string(),
        control: z.number(),
        treated: z.number(),
      }),
    )
    .optional(),
});
export type DatasetSummary = z.infer<typeof DatasetSummary>;

export const UnitsResponse = z.object({
  kind: z.string(),
  covariates: z.array(z.string()),
  x: z.array(z.array(z.number())),
  study: z.array(z.union([z.number(), z.string()])),
  z: z.array(z.number()).optional(),
});
export type UnitsResponse = z.infer<typeof UnitsResponse>;

export const Estimate = z.object({
  tau_hat: z.number(),
  method_tag: z.string(),
  variance_heuristic: z.number().nullable(),
  variance_plugin: z.number().nullable(),
  ci_lower: z.number().nullable(),
  ci_upper: z.number().nullable(),
  ci_level: z.number().nullable(),
  ci_scaling: z.string().nullable(),
  diagnostics_ref: z.string().nullable(),
  extra: z.record(z.any()),
});
export type Estimate = z.infer<typeof Estimate>;

export const WeightRecord = z.object({
  unit: z.number(),
  study: z.number(),
  group: z.number(),
  weight: z.number(),
  retained: z.boolean(),
});
export type WeightRecord = z.infer<typeof WeightRecord>;

export const AsmdRow = z.object({
  basis: z.number(),
  group: z.string(),
  asmd: z.number().nullable(),
  note: z.string(),
});
export type AsmdRow = z.infer<typeof AsmdRow>;

export const Diagnostics = z.object({
  ess: z.record(z.number()),
  retained: z.record(z.number()),
  negative_weight_count: z.number(),
  donor_shares: z.record(z.record(z.number())),
  max_asmd: z.number(),
  lambda_dual: z.record(z.array(z.number())),
  notes: z.array(z.any()),
  weights: z.array(WeightRecord),
  asmd: z.array(AsmdRow),
});
export type Diagnostics = z.infer<typeof Diagnostics>;

export const EstimateResponse = z.object({
  estimate: Estimate,
  diagnostics: Diagnostics,
});
export type EstimateResponse = z.infer<typeof EstimateResponse>;

export const InfeasibleResponse = z.object({
  error: z.string(),
  message: z.string(),
  certificate: z.record(z.any()).nullable(),
});
export type InfeasibleResponse = z.infer<typeof InfeasibleResponse>;

export interface ProfileRequest {
  means: number[];
  tolerances?: number[];
  n_star?: number | null;
}
