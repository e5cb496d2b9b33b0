/** Thin typed client over the service's HTTP contract.
 *
 * The fetch implementation is injectable so tests can run against an
 * in-process recording mock server.
 */

import type {
  Criterion,
  DiffCategory,
  DiffResponse,
  RunsPage,
  SensorSpec,
  TestSuggestion,
  Valence,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: unknown,
  ) {
    super(`api error ${status}: ${JSON.stringify(body)}`);
  }
}

export interface SensorCreate {
  goal: string;
  interval?: number;
  window_size?: number;
  capture_rate?: number;
  verdict_mode?: string;
  smoothing?: { window_k: number; threshold_m: number } | null;
  active?: boolean;
}

export interface CriterionCreate {
  question: string;
  title?: string;
  enabled?: boolean;
  provenance?: string;
  examples?: ExampleIn[];
}

export interface ExampleIn {
  kind: "text_note" | "image";
  text?: string;
  frame_ref?: string;
  image_b64?: string;
  annotations?: { rect: number[]; label: string }[];
}

export interface RunsQuery {
  since?: number;
  until?: number;
  criterion_id?: string;
  outcome?: Valence;
  cursor?: string;
  limit?: number;
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: {} };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) {
      let detail: unknown = null;
      try {
        detail = await response.json();
      } catch {
        detail = await response.text().catch(() => null);
      }
      throw new ApiError(response.status, detail);
    }
    if (response.status === 204) return undefined as T;
    return (await response.json()) as T;
  }

  // sensors
  listSensors(): Promise<SensorSpec[]> {
    return this.request("GET", "/sensors");
  }
  getSensor(id: string): Promise<SensorSpec> {
    return this.request("GET", `/sensors/${id}`);
  }
  createSensor(body: SensorCreate): Promise<SensorSpec> {
    return this.request("POST", "/sensors", body);
  }
  patchSensor(id: string, patch: Record<string, unknown>): Promise<SensorSpec> {
    return this.request("PATCH", `/sensors/${id}`, patch);
  }
  deleteSensor(id: string): Promise<void> {
    return this.request("DELETE", `/sensors/${id}`);
  }

  // criteria
  listCriteria(sensorId: string): Promise<Criterion[]> {
    return this.request("GET", `/sensors/${sensorId}/criteria`);
  }
  createCriterion(sensorId: string, body: CriterionCreate): Promise<Criterion> {
    return this.request("POST", `/sensors/${sensorId}/criteria`, body);
  }
  patchCriterion(id: string, patch: Record<string, unknown>): Promise<Criterion> {
    return this.request("PATCH", `/criteria/${id}`, patch);
  }
  deleteCriterion(id: string): Promise<void> {
    return this.request("DELETE", `/criteria/${id}`);
  }
  attachExample(criterionId: string, example: ExampleIn): Promise<Criterion> {
    return this.request("POST", `/criteria/${criterionId}/examples`, example);
  }

  // authoring
  generateCriteria(sensorId: string): Promise<Criterion[]> {
    return this.request("POST", `/sensors/${sensorId}/criteria:generate`);
  }
  examplesDiff(sensorId: string, categories: DiffCategory[]): Promise<DiffResponse> {
    return this.request("POST", `/sensors/${sensorId}/examples-diff`, { categories });
  }
  diffLabels(sensorId: string): Promise<{ labels: string[] }> {
    return this.request("GET", `/sensors/${sensorId}/diff-labels`);
  }
  suggestTestCases(criterionId: string): Promise<TestSuggestion[]> {
    return this.request("POST", `/criteria/${criterionId}/test-cases`);
  }
  listTestCases(criterionId: string): Promise<TestSuggestion[]> {
    return this.request("GET", `/criteria/${criterionId}/test-cases`);
  }

  // playback
  queryRuns(sensorId: string, query: RunsQuery = {}): Promise<RunsPage> {
    const params = new URLSearchParams();
    for (const [key, value] of Object.entries(query)) {
      if (value !== undefined && value !== null) params.set(key, String(value));
    }
    const suffix = params.size ? `?${params.toString()}` : "";
    return this.request("GET", `/sensors/${sensorId}/runs${suffix}`);
  }
  getSnapshot(hash: string): Promise<Criterion[]> {
    return this.request("GET", `/snapshots/${hash}`);
  }
  frameUrl(frameId: string): string {
    return `${this.baseUrl}/frames/${frameId}`;
  }
  streamUrl(sensorId: string, after?: string): string {
    const suffix = after ? `?after=${encodeURIComponent(after)}` : "";
    return `${this.baseUrl}/sensors/${sensorId}/stream${suffix}`;
  }
}
