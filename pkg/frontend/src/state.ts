/**
 * Console session state and its pure transitions.
 *
 * All updates return fresh objects; history entries are snapshots that are
 * never mutated after creation. A session holds at most one in-flight job:
 * submitting is blocked until the previous job settles or goes stale.
 */

import type { EditPayload, JobStatus, Scene } from "./schema";

export const OMEGA_MIN = 1.0;
export const OMEGA_MAX = 2.0;
export const DEFAULT_OMEGA = 1.5;
export const DEFAULT_OVERLAY_OPACITY = 0.5;

/** Where the source image comes from: a seeded render or an uploaded PNG. */
export type SourceSelection =
  | { mode: "seed"; scene: Scene }
  | { mode: "image"; scene: Scene; imagePng: string };

export type HistoryStatus = JobStatus | "stale";

export interface HistoryEntry {
  readonly jobId: string;
  readonly payload: EditPayload;
  readonly status: HistoryStatus;
  readonly error: string | null;
  /** Result thumbnail URL once the job is done; null before. */
  readonly thumbnailUrl: string | null;
}

export interface ConsoleState {
  /** Server-reported step count T; upper bound of the t_edit slider. */
  readonly steps: number;
  readonly source: SourceSelection;
  /** Chosen part token name, e.g. "creature-head". */
  readonly token: string | null;
  /** Edit attribute text, e.g. "golden". */
  readonly attribute: string;
  readonly tEdit: number;
  readonly omegaFactor: number;
  /** Job id of the one in-flight submission, if any. */
  readonly currentJobId: string | null;
  readonly maskOverlay: boolean;
  readonly overlayOpacity: number;
  /** Mask timestep the scrubber points at; null until a job is done. */
  readonly scrubStep: number | null;
  readonly history: readonly HistoryEntry[];
}

export function initialState(steps: number, scene: Scene): ConsoleState {
  return {
    steps,
    source: { mode: "seed", scene },
    token: null,
    attribute: "",
    tEdit: steps, // full blend horizon by default: maximal background preservation
    omegaFactor: DEFAULT_OMEGA,
    currentJobId: null,
    maskOverlay: true,
    overlayOpacity: DEFAULT_OVERLAY_OPACITY,
    scrubStep: null,
    history: [],
  };
}

export function clampTEdit(steps: number, value: number): number {
  return Math.min(steps, Math.max(1, Math.round(value)));
}

export function clampOmega(value: number): number {
  return Math.min(OMEGA_MAX, Math.max(OMEGA_MIN, value));
}

export function setTEdit(state: ConsoleState, value: number): ConsoleState {
  return { ...state, tEdit: clampTEdit(state.steps, value) };
}

export function setOmega(state: ConsoleState, value: number): ConsoleState {
  return { ...state, omegaFactor: clampOmega(value) };
}

export function setSource(state: ConsoleState, source: SourceSelection): ConsoleState {
  return { ...state, source };
}

export function setToken(state: ConsoleState, token: string | null): ConsoleState {
  return { ...state, token };
}

export function setAttribute(state: ConsoleState, attribute: string): ConsoleState {
  return { ...state, attribute };
}

export function setOverlay(state: ConsoleState, on: boolean, opacity?: number): ConsoleState {
  return {
    ...state,
    maskOverlay: on,
    overlayOpacity: opacity === undefined ? state.overlayOpacity : Math.min(1, Math.max(0, opacity)),
  };
}

export function setScrubStep(state: ConsoleState, t: number | null): ConsoleState {
  return { ...state, scrubStep: t };
}

/** Record an accepted submission: appends a history entry, marks it in flight. */
export function submitStarted(
  state: ConsoleState,
  jobId: string,
  payload: EditPayload,
): ConsoleState {
  if (state.currentJobId !== null) {
    throw new Error(`job ${state.currentJobId} is still in flight`);
  }
  const entry: HistoryEntry = {
    jobId,
    payload,
    status: "queued",
    error: null,
    thumbnailUrl: null,
  };
  return { ...state, currentJobId: jobId, history: [...state.history, entry] };
}

function replaceEntry(
  history: readonly HistoryEntry[],
  jobId: string,
  patch: Partial<Omit<HistoryEntry, "jobId" | "payload">>,
): readonly HistoryEntry[] {
  return history.map((e) => (e.jobId === jobId ? { ...e, ...patch } : e));
}

/** Non-terminal progress (queued -> running). */
export function jobProgressed(state: ConsoleState, jobId: string, status: JobStatus): ConsoleState {
  return { ...state, history: replaceEntry(state.history, jobId, { status }) };
}

/** Terminal update: done (with a thumbnail) or failed (with the server's error). */
export function jobSettled(
  state: ConsoleState,
  jobId: string,
  status: "done" | "failed",
  detail: { error?: string | null; thumbnailUrl?: string | null } = {},
): ConsoleState {
  return {
    ...state,
    currentJobId: state.currentJobId === jobId ? null : state.currentJobId,
    history: replaceEntry(state.history, jobId, {
      status,
      error: detail.error ?? null,
      thumbnailUrl: detail.thumbnailUrl ?? null,
    }),
  };
}

/** The server no longer knows this job (404 while polling): mark, release. */
export function jobStale(state: ConsoleState, jobId: string): ConsoleState {
  return {
    ...state,
    currentJobId: state.currentJobId === jobId ? null : state.currentJobId,
    history: replaceEntry(state.history, jobId, { status: "stale" }),
  };
}
