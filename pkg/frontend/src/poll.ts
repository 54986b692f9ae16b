/**
 * Job polling: one job at a time, a fixed interval apart.
 *
 * The poller tracks the job id it was most recently pointed at; responses
 * that arrive for any other id — a poll that was in flight when the user
 * resubmitted — are discarded, so a slow response can never overwrite a
 * newer job's view. A 404 means the server no longer knows the job
 * (restarted, or the record was discarded): surfaced as `onStale`.
 */

import { ApiError, type EngineClient } from "./api";
import type { JobRecord } from "./schema";

export interface PollEvents {
  /** Queued/running heartbeat. */
  onUpdate?: (record: JobRecord) => void;
  /** Terminal record (status done or failed). */
  onSettled?: (record: JobRecord) => void;
  /** The server returned 404 for this id. */
  onStale?: (jobId: string) => void;
  /** Network failure or a malformed response. */
  onError?: (jobId: string, error: Error) => void;
}

export const POLL_INTERVAL_MS = 1000;

export class JobPoller {
  private current: string | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly client: EngineClient,
    private readonly events: PollEvents,
    readonly intervalMs: number = POLL_INTERVAL_MS,
  ) {}

  /** Start (or re-point) polling; any in-flight response for another id is dropped. */
  watch(jobId: string): void {
    this.current = jobId;
    this.clearTimer();
    void this.tick(jobId);
  }

  stop(): void {
    this.current = null;
    this.clearTimer();
  }

  get watching(): string | null {
    return this.current;
  }

  private async tick(jobId: string): Promise<void> {
    let record: JobRecord;
    try {
      record = await this.client.getJob(jobId);
    } catch (err) {
      if (jobId !== this.current) {
        return; // failure of a poll nobody is waiting on
      }
      this.current = null;
      if (err instanceof ApiError && err.status === 404) {
        this.events.onStale?.(jobId);
      } else {
        this.events.onError?.(jobId, err instanceof Error ? err : new Error(String(err)));
      }
      return;
    }
    if (jobId !== this.current) {
      return; // stale response: watch() moved on while this poll was in flight
    }
    if (record.status === "done" || record.status === "failed") {
      this.current = null;
      this.events.onSettled?.(record);
      return;
    }
    this.events.onUpdate?.(record);
    this.timer = setTimeout(() => void this.tick(jobId), this.intervalMs);
  }

  private clearTimer(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }
}
