/** Run-stream subscription with gap-free resume.
 *
 * The transport is injectable (EventSource-shaped) so tests can drive
 * connects, events, and disconnects deterministically. On error the
 * subscription reconnects with `?after=<last run_id>`, which replays any
 * runs missed while disconnected before going live again.
 */

import type { SensorRun } from "./types.js";

export interface EventSourceLike {
  addEventListener(type: string, listener: (event: MessageEvent) => void): void;
  onerror: ((event: unknown) => void) | null;
  onopen: ((event: unknown) => void) | null;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export type ConnectionStatus = "connecting" | "live" | "stale" | "closed";

export interface RunStreamHandlers {
  onRun(run: SensorRun): void;
  onStatus?(status: ConnectionStatus): void;
}

export class RunStream {
  private source: EventSourceLike | null = null;
  private lastRunId: string | null = null;
  private closed = false;
  /** URLs requested, oldest first; exposed for diagnostics and tests. */
  readonly connectionLog: string[] = [];

  constructor(
    private readonly urlFor: (after?: string) => string,
    private readonly handlers: RunStreamHandlers,
    private readonly createSource: EventSourceFactory,
  ) {}

  connect(): void {
    if (this.closed) return;
    const url = this.urlFor(this.lastRunId ?? undefined);
    this.connectionLog.push(url);
    this.handlers.onStatus?.("connecting");
    const source = this.createSource(url);
    this.source = source;
    source.onopen = () => this.handlers.onStatus?.("live");
    source.addEventListener("run", (event) => {
      const run = JSON.parse(event.data) as SensorRun;
      if (this.lastRunId !== null && run.run_id <= this.lastRunId) return;
      this.lastRunId = run.run_id;
      this.handlers.onRun(run);
    });
    source.onerror = () => {
      if (this.closed) return;
      this.handlers.onStatus?.("stale");
      source.close();
      if (this.source === source) this.source = null;
    };
  }

  /** Reconnect after a disconnect, resuming from the last seen run. */
  resume(): void {
    if (this.closed || this.source !== null) return;
    this.connect();
  }

  close(): void {
    this.closed = true;
    this.source?.close();
    this.source = null;
    this.handlers.onStatus?.("closed");
  }
}
