/** DOM rendering. Plain elements, no framework: each function replaces the
 * container's children from the given state. Event wiring goes through
 * handler callbacks so controllers stay testable.
 */

import type { LiveViewState } from "./live.js";
import type { Criterion, SensorRun } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

export interface LiveViewHandlers {
  onChipClick(criterionId: string): void;
}

export function renderLiveView(
  container: HTMLElement,
  state: LiveViewState,
  handlers: LiveViewHandlers,
): void {
  container.replaceChildren();

  const status = el("div", { class: `connection connection-${state.connection}` });
  status.textContent = state.connection === "stale" ? "reconnecting…" : state.connection;
  container.append(status);

  const verdict = state.latestRun?.verdict ?? null;
  const banner = el("div", { class: "verdict-banner" });
  if (verdict === null) {
    banner.classList.add("verdict-none");
    banner.textContent = "no verdict yet";
  } else if (verdict.error !== null || verdict.outcome === null) {
    banner.classList.add("verdict-errored");
    banner.textContent = `errored: ${verdict.error ?? "no outcome"}`;
  } else {
    const shown = verdict.smoothed_outcome ?? verdict.outcome;
    banner.classList.add(`verdict-${shown}`);
    banner.textContent = verdict.explanation;
  }
  container.append(banner);

  const chipRow = el("div", { class: "chips" });
  for (const chip of state.chips) {
    const button = el(
      "button",
      {
        class: `chip chip-${chip.color}`,
        "data-criterion-id": chip.criterionId,
        "data-valence": chip.valence ?? "errored",
      },
      chip.title,
    );
    button.addEventListener("click", () => handlers.onChipClick(chip.criterionId));
    chipRow.append(button);
  }
  container.append(chipRow);

  const selected = state.chips.find((c) => c.criterionId === state.selectedCriterionId);
  if (selected) {
    const panel = el("div", { class: "chip-detail", "data-criterion-id": selected.criterionId });
    panel.append(el("h3", {}, selected.title));
    panel.append(el("p", { class: "chip-description" }, selected.description));
    if (selected.error !== null) {
      panel.append(el("p", { class: "chip-error" }, selected.error));
    }
    container.append(panel);
  }

  if (state.latestRun && !state.latestRun.skipped) {
    const thumbs = el("div", { class: "frames" });
    for (const frameId of state.latestRun.frame_ids) {
      thumbs.append(el("img", { class: "frame-thumb", "data-frame-id": frameId }));
    }
    container.append(thumbs);
  }
}

export interface EditorHandlers {
  onToggle(criterion: Criterion, enabled: boolean): void;
  onQuestionEdit(criterion: Criterion, question: string): void;
  onDelete(criterion: Criterion): void;
}

export function renderCriteriaEditor(
  container: HTMLElement,
  criteria: Criterion[],
  handlers: EditorHandlers,
): void {
  container.replaceChildren();
  const list = el("ul", { class: "criteria" });
  for (const criterion of criteria) {
    const item = el("li", { class: "criterion", "data-criterion-id": criterion.criterion_id });
    const toggle = el("input", {
      type: "checkbox",
      class: "criterion-toggle",
      "data-criterion-id": criterion.criterion_id,
    });
    toggle.checked = criterion.enabled;
    toggle.addEventListener("change", () => handlers.onToggle(criterion, toggle.checked));
    const question = el("input", {
      type: "text",
      class: "criterion-question",
    });
    question.value = criterion.question;
    question.addEventListener("change", () => handlers.onQuestionEdit(criterion, question.value));
    const remove = el("button", { class: "criterion-delete" }, "delete");
    remove.addEventListener("click", () => handlers.onDelete(criterion));
    item.append(toggle, el("span", { class: "criterion-title" }, criterion.title), question, remove);
    list.append(item);
  }
  container.append(list);
}

export interface DraftHandlers {
  onAccept(accepted: Criterion[]): void;
}

/** Drafts from generation or examples-diff, with per-draft accept boxes. */
export function renderDrafts(
  container: HTMLElement,
  drafts: Criterion[],
  handlers: DraftHandlers,
  reasoning?: string,
): void {
  container.replaceChildren();
  if (reasoning) container.append(el("p", { class: "diff-reasoning" }, reasoning));
  const boxes: [HTMLInputElement, Criterion][] = [];
  const list = el("ul", { class: "drafts" });
  for (const draft of drafts) {
    const item = el("li", { class: "draft", "data-criterion-id": draft.criterion_id });
    const box = el("input", { type: "checkbox", class: "draft-accept" });
    boxes.push([box, draft]);
    item.append(box, el("span", { class: "draft-title" }, draft.title), el("span", { class: "draft-question" }, draft.question));
    list.append(item);
  }
  container.append(list);
  const accept = el("button", { class: "drafts-accept" }, "accept selected");
  accept.addEventListener("click", () =>
    handlers.onAccept(boxes.filter(([box]) => box.checked).map(([, draft]) => draft)),
  );
  container.append(accept);
}

export function renderPlayback(
  container: HTMLElement,
  runs: SensorRun[],
  frameUrl: (frameId: string) => string,
): void {
  container.replaceChildren();
  const list = el("ol", { class: "playback" });
  for (const run of runs) {
    const item = el("li", { class: "run", "data-run-id": run.run_id });
    if (run.skipped) {
      item.classList.add("run-skipped");
      item.append(el("span", {}, `skipped @ ${run.ticked_at}`));
    } else {
      const outcome = run.verdict?.outcome ?? "errored";
      item.append(el("span", { class: `run-outcome run-${outcome}` }, String(outcome)));
      item.append(
        el("span", { class: "run-snapshot", "data-snapshot": run.criteria_snapshot }),
      );
      for (const frameId of run.frame_ids) {
        item.append(el("img", { class: "frame-thumb", src: frameUrl(frameId) }));
      }
      for (const result of run.results) {
        item.append(
          el(
            "span",
            { class: "run-result", "data-criterion-id": result.criterion_id },
            `${result.criterion_id}: ${result.valence ?? "errored"}`,
          ),
        );
      }
    }
    list.append(item);
  }
  container.append(list);
}
