/** Domain types mirroring the service's canonical JSON payloads. */

export type Valence = "positive" | "negative";
export type VerdictMode = "model" | "all_of" | "any_of";
export type Provenance = "manual" | "generated" | "examples_diff";

export interface Annotation {
  /** Normalized [x, y, width, height], each in [0, 1]. */
  rect: [number, number, number, number];
  label: string;
}

export interface ExampleAttachment {
  kind: "text_note" | "image";
  text: string | null;
  frame_ref: string | null;
  annotations: Annotation[];
}

export interface Criterion {
  criterion_id: string;
  sensor_id: string;
  title: string;
  question: string;
  examples: ExampleAttachment[];
  enabled: boolean;
  provenance: Provenance;
  created_at: number;
  updated_at: number;
}

export interface Smoothing {
  window_k: number;
  threshold_m: number;
}

export interface SensorSpec {
  sensor_id: string;
  goal: string;
  interval: number;
  window_size: number;
  capture_rate: number;
  verdict_mode: VerdictMode;
  smoothing: Smoothing | null;
  active: boolean;
}

export interface CriterionResult {
  criterion_id: string;
  run_id: string;
  valence: Valence | null;
  description: string;
  model_id: string;
  latency_ms: number;
  raw: string;
  error: string | null;
}

export interface Verdict {
  run_id: string;
  outcome: Valence | null;
  explanation: string;
  mode_used: VerdictMode;
  contributing: string[];
  smoothed_outcome: Valence | null;
  error: string | null;
}

export interface SensorRun {
  run_id: string;
  sensor_id: string;
  ticked_at: number;
  frame_ids: string[];
  results: CriterionResult[];
  verdict: Verdict | null;
  skipped: boolean;
  criteria_snapshot: string;
}

export interface TestSuggestion {
  criterion_id: string;
  scenario: string;
  rationale: string;
}

export interface DiffCategory {
  label: string;
  frame_refs: string[];
}

export interface DiffResponse {
  reasoning: string;
  proposed: Criterion[];
}

export interface RunsPage {
  runs: SensorRun[];
  next_cursor: string | null;
}
