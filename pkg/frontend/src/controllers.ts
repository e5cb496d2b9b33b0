/** Controllers glue the API client, the run stream, and the renderers.
 *
 * Valences are never updated optimistically: the UI changes only when a
 * server payload (stream event or request response) says so.
 */

import { ApiClient, type CriterionCreate } from "./api.js";
import {
  applyRun,
  initialLiveState,
  selectChip,
  setConnection,
  titleMap,
  type LiveViewState,
} from "./live.js";
import { renderCriteriaEditor, renderDrafts, renderLiveView, renderPlayback } from "./render.js";
import { RunStream, type EventSourceFactory } from "./stream.js";
import type { Criterion, DiffCategory, SensorRun } from "./types.js";

export class LiveController {
  state: LiveViewState = initialLiveState();
  private titles = new Map<string, string>();
  readonly stream: RunStream;

  constructor(
    private readonly api: ApiClient,
    private readonly sensorId: string,
    private readonly container: HTMLElement,
    createSource: EventSourceFactory,
  ) {
    this.stream = new RunStream(
      (after) => api.streamUrl(sensorId, after),
      {
        onRun: (run) => this.onRun(run),
        onStatus: (status) => {
          this.state = setConnection(this.state, status);
          this.render();
        },
      },
      createSource,
    );
  }

  async start(): Promise<void> {
    this.titles = titleMap(await this.api.listCriteria(this.sensorId));
    this.stream.connect();
    this.render();
  }

  async refreshTitles(): Promise<void> {
    this.titles = titleMap(await this.api.listCriteria(this.sensorId));
  }

  private onRun(run: SensorRun): void {
    this.state = applyRun(this.state, run, this.titles);
    this.render();
  }

  handleChipClick(criterionId: string): void {
    this.state = selectChip(
      this.state,
      this.state.selectedCriterionId === criterionId ? null : criterionId,
    );
    this.render();
  }

  render(): void {
    renderLiveView(this.container, this.state, {
      onChipClick: (id) => this.handleChipClick(id),
    });
  }

  stop(): void {
    this.stream.close();
  }
}

export class EditorController {
  criteria: Criterion[] = [];

  constructor(
    private readonly api: ApiClient,
    private readonly sensorId: string,
    private readonly container: HTMLElement,
  ) {}

  async load(): Promise<void> {
    this.criteria = await this.api.listCriteria(this.sensorId);
    this.render();
  }

  async toggle(criterion: Criterion, enabled: boolean): Promise<Criterion> {
    const updated = await this.api.patchCriterion(criterion.criterion_id, { enabled });
    this.criteria = this.criteria.map((c) =>
      c.criterion_id === updated.criterion_id ? updated : c,
    );
    this.render();
    return updated;
  }

  async editQuestion(criterion: Criterion, question: string): Promise<Criterion> {
    const updated = await this.api.patchCriterion(criterion.criterion_id, { question });
    this.criteria = this.criteria.map((c) =>
      c.criterion_id === updated.criterion_id ? updated : c,
    );
    this.render();
    return updated;
  }

  async remove(criterion: Criterion): Promise<void> {
    await this.api.deleteCriterion(criterion.criterion_id);
    this.criteria = this.criteria.filter((c) => c.criterion_id !== criterion.criterion_id);
    this.render();
  }

  /** Persist the accepted drafts verbatim (disabled, as drafted); the user
   * enables them with the regular toggle afterwards. */
  async acceptDrafts(accepted: Criterion[]): Promise<Criterion[]> {
    const created: Criterion[] = [];
    for (const draft of accepted) {
      const body: CriterionCreate = {
        question: draft.question,
        title: draft.title,
        enabled: false,
        provenance: draft.provenance,
      };
      created.push(await this.api.createCriterion(this.sensorId, body));
    }
    await this.load();
    return created;
  }

  render(): void {
    renderCriteriaEditor(this.container, this.criteria, {
      onToggle: (criterion, enabled) => void this.toggle(criterion, enabled),
      onQuestionEdit: (criterion, question) => void this.editQuestion(criterion, question),
      onDelete: (criterion) => void this.remove(criterion),
    });
  }
}

export class DiffController {
  reasoning = "";
  proposed: Criterion[] = [];

  constructor(
    private readonly api: ApiClient,
    private readonly sensorId: string,
    private readonly container: HTMLElement,
    private readonly editor: EditorController,
  ) {}

  async submit(categories: DiffCategory[]): Promise<void> {
    const result = await this.api.examplesDiff(this.sensorId, categories);
    this.reasoning = result.reasoning;
    this.proposed = result.proposed;
    this.render();
  }

  async accept(accepted: Criterion[]): Promise<Criterion[]> {
    const created = await this.editor.acceptDrafts(accepted);
    this.proposed = this.proposed.filter((draft) => !accepted.includes(draft));
    this.render();
    return created;
  }

  render(): void {
    renderDrafts(
      this.container,
      this.proposed,
      { onAccept: (accepted) => void this.accept(accepted) },
      this.reasoning,
    );
  }
}

export class PlaybackController {
  runs: SensorRun[] = [];
  nextCursor: string | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly sensorId: string,
    private readonly container: HTMLElement,
    private readonly pageSize = 50,
  ) {}

  async loadFirstPage(): Promise<void> {
    this.runs = [];
    this.nextCursor = null;
    await this.loadMore(true);
  }

  async loadMore(first = false): Promise<void> {
    if (!first && this.nextCursor === null) return;
    const page = await this.api.queryRuns(this.sensorId, {
      limit: this.pageSize,
      ...(this.nextCursor ? { cursor: this.nextCursor } : {}),
    });
    this.runs = [...this.runs, ...page.runs];
    this.nextCursor = page.next_cursor;
    this.render();
  }

  render(): void {
    renderPlayback(this.container, this.runs, (frameId) => this.api.frameUrl(frameId));
  }
}
