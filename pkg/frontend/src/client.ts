// Thin HTTP client. The fetch function is injectable so tests can
// substitute recorded responses.

import {
  DatasetSummary,
  EstimateResponse,
  InfeasibleResponse,
  ProfileRequest,
  UnitsResponse,
} from "./types.js";

export interface MinimalResponse {
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<MinimalResponse>;

export type EstimateOutcome =
  | { kind: "ok"; body: EstimateResponse }
  | { kind: "infeasible"; body: InfeasibleResponse }
  | { kind: "error"; status: number; message: string };

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (u, i) => fetch(u, i),
  ) {}

  async summary(): Promise<DatasetSummary> {
    const res = await this.fetchFn(`${this.base}/dataset/summary`);
    return DatasetSummary.parse(await res.json());
  }

  async units(): Promise<UnitsResponse> {
    const res = await this.fetchFn(`${this.base}/dataset/units`);
    return UnitsResponse.parse(await res.json());
  }

  async estimate(
    profile: ProfileRequest,
    bounded: boolean,
    level: number,
    method: string | null,
  ): Promise<EstimateOutcome> {
    const res = await this.fetchFn(`${this.base}/estimate`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ profile, bounded, level, method }),
    });
    const body = await res.json();
    if (res.status === 200) {
      return { kind: "ok", body: EstimateResponse.parse(body) };
    }
    if (res.status === 422) {
      return { kind: "infeasible", body: InfeasibleResponse.parse(body) };
    }
    const msg =
      body && typeof body === "object" && "message" in (body as object)
        ? String((body as { message: unknown }).message)
        : `request failed with status ${res.status}`;
    return { kind: "error", status: res.status, message: msg };
  }
}
