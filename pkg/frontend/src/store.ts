// Application state: the profile draft the user edits, the latest
// service result, the result history, and the infeasibility banner.
//
// Every displayed number comes from a service response; this module
// only moves values around. Draft edits are debounced, at most one
// request is in flight, and responses that no longer match the newest
// request sequence number are dropped.

import { ApiClient, EstimateOutcome } from "./client.js";
import {
  DatasetSummary,
  Diagnostics,
  Estimate,
  EstimateResponse,
  ProfileRequest,
  UnitsResponse,
} from "./types.js";

export interface ProfileDraft {
  means: number[];
  tolerances: number[];
  nStar: number | null;
  bounded: boolean;
  method: string | null;
  level: number;
}

export interface ResultView {
  profile: ProfileDraft;
  estimate: Estimate;
  diagnostics: Diagnostics;
}

export interface HistoryEntry extends ResultView {
  id: number;
}

export interface Banner {
  message: string;
  violated: string[];
  certificate: Record<string, unknown> | null;
}

export interface StoreOptions {
  client: ApiClient;
  debounceMs?: number;
}

const DEFAULT_DEBOUNCE_MS = 300;

export class ExplorerStore {
  summary: DatasetSummary | null = null;
  units: UnitsResponse | null = null;
  draft: ProfileDraft = {
    means: [],
    tolerances: [],
    nStar: null,
    bounded: true,
    method: null,
    level: 0.95,
  };
  view: ResultView | null = null;
  history: HistoryEntry[] = [];
  banner: Banner | null = null;

  private readonly client: ApiClient;
  private readonly debounceMs: number;
  private seq = 0;
  private inflight = false;
  private pending = false;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private nextId = 1;
  private listeners: Array<() => void> = [];

  constructor(opts: StoreOptions) {
    this.client = opts.client;
    this.debounceMs = opts.debounceMs ?? DEFAULT_DEBOUNCE_MS;
  }

  subscribe(fn: () => void): void {
    this.listeners.push(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  get covariateNames(): string[] {
    return this.summary ? Object.keys(this.summary.covariates) : [];
  }

  async load(): Promise<void> {
    this.summary = await this.client.summary();
    this.units = await this.client.units();
    const names = this.covariateNames;
    this.draft.means = names.map(
      (name) => this.summary!.covariates[name]!.mean,
    );
    this.draft.tolerances = names.map(() => 0);
    this.notify();
  }

  /** Clamp a slider value to the observed covariate range. */
  clampMean(index: number, value: number): number {
    const name = this.covariateNames[index];
    if (!this.summary || name === undefined) return value;
    const stats = this.summary.covariates[name]!;
    return Math.min(stats.max, Math.max(stats.min, value));
  }

  setMean(index: number, value: number): void {
    this.draft.means[index] = this.clampMean(index, value);
    this.scheduleSubmit();
  }

  setTolerance(index: number, value: number): void {
    this.draft.tolerances[index] = Math.max(0, value);
    this.scheduleSubmit();
  }

  setBounded(bounded: boolean): void {
    this.draft.bounded = bounded;
    this.scheduleSubmit();
  }

  setLevel(level: number): void {
    if (level > 0 && level < 1) this.draft.level = level;
    this.scheduleSubmit();
  }

  setNStar(nStar: number | null): void {
    this.draft.nStar = nStar;
    this.scheduleSubmit();
  }

  setMethod(method: string | null): void {
    this.draft.method = method;
    this.scheduleSubmit();
  }

  scheduleSubmit(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.submitNow();
    }, this.debounceMs);
  }

  private profileRequest(): ProfileRequest {
    const req: ProfileRequest = { means: [...this.draft.means] };
    if (this.draft.tolerances.some((t) => t > 0)) {
      req.tolerances = [...this.draft.tolerances];
    }
    if (this.draft.nStar !== null) req.n_star = this.draft.nStar;
    return req;
  }

  async submitNow(): Promise<void> {
    if (this.inflight) {
      // a newer draft supersedes whatever is running; resend when the
      // current request settles
      this.pending = true;
      this.seq += 1;
      return;
    }
    const mySeq = ++this.seq;
    this.inflight = true;
    let outcome: EstimateOutcome;
    try {
      outcome = await this.client.estimate(
        this.profileRequest(),
        this.draft.bounded,
        this.draft.level,
        this.draft.method,
      );
    } catch (err) {
      outcome = { kind: "error", status: 0, message: String(err) };
    }
    this.inflight = false;
    if (this.pending) {
      this.pending = false;
      void this.submitNow();
      return; // this response is stale by construction
    }
    if (mySeq !== this.seq) return; // superseded, discard
    this.applyOutcome(outcome);
  }

  private applyOutcome(outcome: EstimateOutcome): void {
    if (outcome.kind === "ok") {
      this.banner = null;
      const snapshot: ProfileDraft = {
        ...this.draft,
        means: [...this.draft.means],
        tolerances: [...this.draft.tolerances],
      };
      this.view = this.resultView(outcome.body, snapshot);
      this.history.push({ id: this.nextId++, ...this.view });
    } else if (outcome.kind === "infeasible") {
      // prior result and history stay on screen untouched
      this.banner = {
        message: outcome.body.message,
        violated: violatedConstraints(
          outcome.body.certificate,
          this.covariateNames,
        ),
        certificate: outcome.body.certificate,
      };
    } else {
      this.banner = {
        message: outcome.message,
        violated: [],
        certificate: null,
      };
    }
    this.notify();
  }

  private resultView(
    body: EstimateResponse,
    profile: ProfileDraft,
  ): ResultView {
    return {
      profile,
      estimate: body.estimate,
      diagnostics: body.diagnostics,
    };
  }

  get compareEnabled(): boolean {
    return this.history.length >= 2;
  }

  historyEntries(ids: number[]): HistoryEntry[] {
    return this.history.filter((e) => ids.includes(e.id));
  }
}

/**
 * Names of the constraints driving an infeasibility certificate: the
 * entries of the dual ray with non-negligible magnitude, mapped to the
 * normalization row and the covariate names.
 */
export function violatedConstraints(
  certificate: Record<string, unknown> | null,
  covariates: string[],
): string[] {
  if (!certificate || !Array.isArray(certificate["dual_ray"])) return [];
  const ray = certificate["dual_ray"] as number[];
  const out: string[] = [];
  ray.forEach((v, k) => {
    if (Math.abs(v) > 1e-8) {
      out.push(k === 0 ? "normalization" : (covariates[k - 1] ?? `b${k}`));
    }
  });
  return out;
}
