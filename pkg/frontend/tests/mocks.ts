/** In-process recording mock of the sensorforge HTTP API, plus a
 * controllable EventSource fake for the run stream. Every request is
 * recorded so tests can assert exact wiring.
 */

import type { FetchLike } from "../src/api.js";
import type { EventSourceLike } from "../src/stream.js";
import type {
  Criterion,
  CriterionResult,
  DiffResponse,
  SensorRun,
  SensorSpec,
  Valence,
  Verdict,
} from "../src/types.js";

export interface RecordedRequest {
  method: string;
  path: string;
  query: URLSearchParams;
  body: unknown;
}

/** Let all pending promise chains (fetch → json → state update) settle. */
export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

let idCounter = 0;
export function nextId(prefix: string): string {
  idCounter += 1;
  return `${prefix}${String(idCounter).padStart(4, "0")}`;
}

export function makeSensor(overrides: Partial<SensorSpec> = {}): SensorSpec {
  return {
    sensor_id: nextId("S"),
    goal: "tell me if toddler might damage something",
    interval: 3,
    window_size: 3,
    capture_rate: 1,
    verdict_mode: "all_of",
    smoothing: null,
    active: true,
    ...overrides,
  };
}

export function makeCriterion(sensorId: string, overrides: Partial<Criterion> = {}): Criterion {
  const id = overrides.criterion_id ?? nextId("C");
  return {
    criterion_id: id,
    sensor_id: sensorId,
    title: `Check ${id}`,
    question: `Is ${id} in a safe state?`,
    examples: [],
    enabled: true,
    provenance: "manual",
    created_at: 0,
    updated_at: 0,
    ...overrides,
  };
}

export function makeResult(
  runId: string,
  criterionId: string,
  valence: Valence | null,
  overrides: Partial<CriterionResult> = {},
): CriterionResult {
  return {
    criterion_id: criterionId,
    run_id: runId,
    valence,
    description: `description for ${criterionId}`,
    model_id: "fast-tier",
    latency_ms: 10,
    raw: valence === null ? "garbled" : `{"valence":"${valence}"}`,
    error: valence === null ? "ParseFailure: garbled" : null,
    ...overrides,
  };
}

export function makeRun(
  sensorId: string,
  results: CriterionResult[],
  overrides: Partial<SensorRun> = {},
): SensorRun {
  const runId = overrides.run_id ?? nextId("R");
  const ok = results.filter((r) => r.error === null);
  const outcome: Valence | null = ok.length
    ? ok.every((r) => r.valence === "positive")
      ? "positive"
      : "negative"
    : null;
  const verdict: Verdict = {
    run_id: runId,
    outcome,
    explanation: outcome === "positive" ? "all criteria passed" : "something failed",
    mode_used: "all_of",
    contributing: results.map((r) => r.criterion_id),
    smoothed_outcome: null,
    error: null,
  };
  return {
    run_id: runId,
    sensor_id: sensorId,
    ticked_at: 0,
    frame_ids: ["f".repeat(64)],
    results: results.map((r) => ({ ...r, run_id: runId })),
    verdict,
    skipped: false,
    criteria_snapshot: "h".repeat(64),
    ...overrides,
  };
}

export class MockServer {
  readonly requests: RecordedRequest[] = [];
  sensors = new Map<string, SensorSpec>();
  criteria = new Map<string, Criterion>();
  runs = new Map<string, SensorRun[]>();
  /** Canned payloads for authoring endpoints. */
  generateResponses: Criterion[][] = [];
  diffResponses: DiffResponse[] = [];

  addSensor(sensor: SensorSpec): SensorSpec {
    this.sensors.set(sensor.sensor_id, sensor);
    this.runs.set(sensor.sensor_id, []);
    return sensor;
  }

  addCriterion(criterion: Criterion): Criterion {
    this.criteria.set(criterion.criterion_id, criterion);
    return criterion;
  }

  addRun(run: SensorRun): SensorRun {
    this.runs.get(run.sensor_id)?.push(run);
    return run;
  }

  recorded(method: string, pathPrefix: string): RecordedRequest[] {
    return this.requests.filter((r) => r.method === method && r.path.startsWith(pathPrefix));
  }

  fetch: FetchLike = async (url, init) => {
    const parsed = new URL(url, "http://mock");
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    this.requests.push({ method, path: parsed.pathname, query: parsed.searchParams, body });
    const respond = (status: number, payload: unknown): Response =>
      new Response(payload === undefined ? null : JSON.stringify(payload), {
        status,
        headers: { "content-type": "application/json" },
      });
    const parts = parsed.pathname.split("/").filter(Boolean);

    if (parts[0] === "sensors") {
      const sensorId = parts[1];
      if (!sensorId) {
        if (method === "GET") return respond(200, [...this.sensors.values()]);
        if (method === "POST") {
          const sensor = makeSensor({ ...body, sensor_id: nextId("S") });
          return respond(201, this.addSensor(sensor));
        }
      }
      const sensor = sensorId ? this.sensors.get(sensorId) : undefined;
      if (!sensor) return respond(404, { detail: "unknown sensor" });
      if (parts.length === 2) {
        if (method === "GET") return respond(200, sensor);
        if (method === "PATCH") {
          const updated = { ...sensor, ...body } as SensorSpec;
          this.sensors.set(sensor.sensor_id, updated);
          return respond(200, updated);
        }
        if (method === "DELETE") {
          this.sensors.delete(sensor.sensor_id);
          return respond(204, undefined);
        }
      }
      if (parts[2] === "criteria" && method === "GET") {
        return respond(
          200,
          [...this.criteria.values()]
            .filter((c) => c.sensor_id === sensor.sensor_id)
            .sort((a, b) => a.criterion_id.localeCompare(b.criterion_id)),
        );
      }
      if (parts[2] === "criteria" && method === "POST") {
        const created = makeCriterion(sensor.sensor_id, {
          criterion_id: nextId("C"),
          title: body.title ?? body.question.slice(0, 32),
          question: body.question,
          enabled: body.enabled ?? true,
          provenance: body.provenance ?? "manual",
          examples: (body.examples ?? []).map((e: Record<string, unknown>) => ({
            kind: e.kind,
            text: e.text ?? null,
            frame_ref: e.frame_ref ?? null,
            annotations: e.annotations ?? [],
          })),
        });
        return respond(201, this.addCriterion(created));
      }
      if (parts[2] === "criteria:generate" && method === "POST") {
        const drafts = this.generateResponses.shift();
        if (!drafts) return respond(502, { detail: "no canned drafts" });
        return respond(200, drafts);
      }
      if (parts[2] === "examples-diff" && method === "POST") {
        const diff = this.diffResponses.shift();
        if (!diff) return respond(502, { detail: "no canned diff" });
        return respond(200, diff);
      }
      if (parts[2] === "runs" && method === "GET") {
        const all = [...(this.runs.get(sensor.sensor_id) ?? [])].sort((a, b) =>
          a.run_id.localeCompare(b.run_id),
        );
        const cursor = parsed.searchParams.get("cursor");
        const limit = Number(parsed.searchParams.get("limit") ?? 100);
        const filtered = cursor ? all.filter((r) => r.run_id > cursor) : all;
        const page = filtered.slice(0, limit);
        return respond(200, {
          runs: page,
          next_cursor: page.length === limit ? page[page.length - 1]!.run_id : null,
        });
      }
    }

    if (parts[0] === "criteria" && parts[1]) {
      const criterion = this.criteria.get(parts[1]);
      if (!criterion) return respond(404, { detail: "unknown criterion" });
      if (parts.length === 2 && method === "PATCH") {
        const updated = { ...criterion, ...body } as Criterion;
        this.criteria.set(criterion.criterion_id, updated);
        return respond(200, updated);
      }
      if (parts.length === 2 && method === "GET") return respond(200, criterion);
      if (parts.length === 2 && method === "DELETE") {
        this.criteria.delete(criterion.criterion_id);
        return respond(204, undefined);
      }
      if (parts[2] === "examples" && method === "POST") {
        const updated: Criterion = {
          ...criterion,
          examples: [
            ...criterion.examples,
            {
              kind: body.kind,
              text: body.text ?? null,
              frame_ref: body.frame_ref ?? (body.image_b64 ? "u".repeat(64) : null),
              annotations: body.annotations ?? [],
            },
          ],
        };
        this.criteria.set(criterion.criterion_id, updated);
        return respond(200, updated);
      }
    }

    if (parts[0] === "snapshots" && method === "GET") {
      return respond(200, []);
    }

    return respond(404, { detail: `unhandled ${method} ${parsed.pathname}` });
  };
}

type Listener = (event: MessageEvent) => void;

export class FakeEventSource implements EventSourceLike {
  private listeners = new Map<string, Listener[]>();
  onerror: ((event: unknown) => void) | null = null;
  onopen: ((event: unknown) => void) | null = null;
  closed = false;

  constructor(readonly url: string) {}

  addEventListener(type: string, listener: Listener): void {
    const existing = this.listeners.get(type) ?? [];
    this.listeners.set(type, [...existing, listener]);
  }

  open(): void {
    this.onopen?.({});
  }

  emitRun(run: SensorRun): void {
    const event = { data: JSON.stringify(run), lastEventId: run.run_id } as MessageEvent;
    for (const listener of this.listeners.get("run") ?? []) listener(event);
  }

  fail(): void {
    this.onerror?.({});
  }

  close(): void {
    this.closed = true;
  }
}

/** Factory that remembers every source it created, in order. */
export function fakeSourceFactory(): {
  factory: (url: string) => FakeEventSource;
  sources: FakeEventSource[];
} {
  const sources: FakeEventSource[] = [];
  return {
    sources,
    factory: (url: string) => {
      const source = new FakeEventSource(url);
      sources.push(source);
      return source;
    },
  };
}
