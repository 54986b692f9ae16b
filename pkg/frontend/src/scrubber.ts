/**
 * Timestep scrubber: maps a slider position to the per-step mask artifact.
 *
 * A finished job lists one mask PNG per denoising step under
 * `artifacts.masks`, keyed by the step's noise level t. The scrubber works
 * from that listing only — whatever steps the engine wrote are the steps the
 * user can inspect.
 */

import type { Artifacts } from "./schema";

/** Mask timesteps a job exposes, ascending; empty until the job is done. */
export function maskSteps(artifacts: Artifacts): number[] {
  return Object.keys(artifacts.masks ?? {})
    .map(Number)
    .filter(Number.isFinite)
    .sort((a, b) => a - b);
}

/** Snap a slider value to the nearest available timestep (ties break upward). */
export function nearestMaskStep(steps: readonly number[], wanted: number): number | null {
  let best: number | null = null;
  for (const t of steps) {
    if (best === null || Math.abs(t - wanted) <= Math.abs(best - wanted)) {
      best = t;
    }
  }
  return best;
}

/** The artifact path recorded for timestep t ("mask/8.png"), or null. */
export function maskArtifactPath(artifacts: Artifacts, t: number): string | null {
  return artifacts.masks?.[String(t)] ?? null;
}
