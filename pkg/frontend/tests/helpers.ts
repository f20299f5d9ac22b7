// Shared test scaffolding: fixture loading and a scripted fetch whose
// /estimate responses are served from a queue (optionally resolved by
// hand so in-flight behavior can be exercised).

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { ApiClient, FetchLike, MinimalResponse } from "../src/client.js";
import { ExplorerStore } from "../src/store.js";

const here = dirname(fileURLToPath(import.meta.url));

export function fixture<T>(name: string): T {
  return JSON.parse(readFileSync(join(here, "fixtures", name), "utf8")) as T;
}

export const summaryFixture = fixture<Record<string, unknown>>("summary.json");
export const unitsFixture = fixture<Record<string, unknown>>("units.json");
export const infeasibleFixture =
  fixture<Record<string, unknown>>("infeasible.json");
export const parityFixture = fixture<
  Array<{
    profile: { means: number[]; n_star?: number; tolerances?: number[] };
    cli: Record<string, unknown>;
    api: { estimate: Record<string, unknown>; diagnostics: Record<string, unknown> };
  }>
>("parity.json");

export interface QueuedResponse {
  status: number;
  body: unknown;
  /** when true the promise stays unresolved until release() is called */
  hold?: boolean;
}

export interface ScriptedFetch {
  fetchFn: FetchLike;
  estimateCalls: Array<{ profile: { means: number[] } }>;
  /** resolve the oldest held /estimate response */
  release(): void;
}

export function scriptedFetch(queue: QueuedResponse[]): ScriptedFetch {
  const estimateCalls: Array<{ profile: { means: number[] } }> = [];
  const held: Array<() => void> = [];
  const fetchFn: FetchLike = (url, init) => {
    if (url.endsWith("/dataset/summary")) {
      return Promise.resolve(asResponse(200, summaryFixture));
    }
    if (url.endsWith("/dataset/units")) {
      return Promise.resolve(asResponse(200, unitsFixture));
    }
    if (url.endsWith("/estimate")) {
      estimateCalls.push(JSON.parse(init?.body ?? "{}"));
      const next = queue.shift();
      if (!next) throw new Error("estimate queue exhausted");
      const response = asResponse(next.status, next.body);
      if (next.hold) {
        return new Promise<MinimalResponse>((resolve) => {
          held.push(() => resolve(response));
        });
      }
      return Promise.resolve(response);
    }
    throw new Error(`unexpected url ${url}`);
  };
  return {
    fetchFn,
    estimateCalls,
    release() {
      const fn = held.shift();
      if (!fn) throw new Error("no held response");
      fn();
    },
  };
}

function asResponse(status: number, body: unknown): MinimalResponse {
  return { status, json: () => Promise.resolve(body) };
}

export function makeStore(
  queue: QueuedResponse[],
  debounceMs = 300,
): { store: ExplorerStore; script: ScriptedFetch } {
  const script = scriptedFetch(queue);
  const store = new ExplorerStore({
    client: new ApiClient("", script.fetchFn),
    debounceMs,
  });
  return { store, script };
}

/** yield to the microtask queue so settled promises propagate */
export async function flush(times = 4): Promise<void> {
  for (let i = 0; i < times; i += 1) await Promise.resolve();
}
