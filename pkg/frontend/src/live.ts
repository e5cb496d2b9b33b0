/** Live view state: chip colors derive solely from the latest non-skipped
 * run's valences. Green = positive, red = negative, gray = errored result.
 * The UI performs no sensing logic of its own — every valence and text shown
 * comes verbatim from a server payload.
 */

import type { Criterion, SensorRun, Valence } from "./types.js";

export type ChipColor = "green" | "red" | "gray";

export interface ChipState {
  criterionId: string;
  title: string;
  color: ChipColor;
  /** Verbatim description from the result payload. */
  description: string;
  valence: Valence | null;
  error: string | null;
}

export interface LiveViewState {
  latestRun: SensorRun | null;
  chips: ChipState[];
  selectedCriterionId: string | null;
  connection: "connecting" | "live" | "stale" | "closed";
}

export function initialLiveState(): LiveViewState {
  return { latestRun: null, chips: [], selectedCriterionId: null, connection: "connecting" };
}

export function chipColor(valence: Valence | null, error: string | null): ChipColor {
  if (error !== null || valence === null) return "gray";
  return valence === "positive" ? "green" : "red";
}

const CHIP_TITLE_MAX = 32;

export function chipTitle(criterionId: string, titles: Map<string, string>): string {
  const title = titles.get(criterionId) ?? criterionId;
  return title.length > CHIP_TITLE_MAX ? `${title.slice(0, CHIP_TITLE_MAX - 1)}…` : title;
}

/** Fold one streamed run into the view state. Skipped runs carry no
 * results, so they leave the chips untouched. */
export function applyRun(
  state: LiveViewState,
  run: SensorRun,
  titles: Map<string, string>,
): LiveViewState {
  if (run.skipped) {
    return { ...state, latestRun: run };
  }
  const chips = run.results.map((result) => ({
    criterionId: result.criterion_id,
    title: chipTitle(result.criterion_id, titles),
    color: chipColor(result.valence, result.error),
    description: result.description,
    valence: result.valence,
    error: result.error,
  }));
  const stillPresent = chips.some((c) => c.criterionId === state.selectedCriterionId);
  return {
    ...state,
    latestRun: run,
    chips,
    selectedCriterionId: stillPresent ? state.selectedCriterionId : null,
  };
}

export function selectChip(state: LiveViewState, criterionId: string | null): LiveViewState {
  return { ...state, selectedCriterionId: criterionId };
}

export function setConnection(
  state: LiveViewState,
  connection: LiveViewState["connection"],
): LiveViewState {
  return { ...state, connection };
}

export function titleMap(criteria: Criterion[]): Map<string, string> {
  return new Map(criteria.map((c) => [c.criterion_id, c.title]));
}
