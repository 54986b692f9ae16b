import { describe, expect, it } from "vitest";

import type { EditPayload, Scene } from "../src/schema";
import {
  clampOmega,
  clampTEdit,
  initialState,
  jobProgressed,
  jobSettled,
  jobStale,
  setOmega,
  setOverlay,
  setTEdit,
  submitStarted,
  type ConsoleState,
} from "../src/state";

const SCENE: Scene = {
  kind: "creature",
  stance: "quadruped",
  background: "sky",
  attrs: ["red", "blue", "green"],
  seed: 31,
};

function payload(tEdit: number): EditPayload {
  return {
    scene: SCENE,
    prompt: "with golden <creature-head>",
    t_edit: tEdit,
    omega_factor: 1.5,
    seed: 31,
  };
}

describe("slider bounds", () => {
  it("clamps t_edit to [1, server steps]", () => {
    expect(clampTEdit(8, 0)).toBe(1);
    expect(clampTEdit(8, -5)).toBe(1);
    expect(clampTEdit(8, 3)).toBe(3);
    expect(clampTEdit(8, 8)).toBe(8);
    expect(clampTEdit(8, 99)).toBe(8);
  });

  it("rounds fractional t_edit values to whole steps", () => {
    expect(clampTEdit(8, 3.7)).toBe(4);
  });

  it("clamps omega_factor to [1.0, 2.0]", () => {
    expect(clampOmega(0.2)).toBe(1.0);
    expect(clampOmega(1.0)).toBe(1.0);
    expect(clampOmega(1.37)).toBe(1.37);
    expect(clampOmega(2.0)).toBe(2.0);
    expect(clampOmega(5)).toBe(2.0);
  });

  it("applies the clamps through the setters", () => {
    const state = initialState(8, SCENE);
    expect(setTEdit(state, 50).tEdit).toBe(8);
    expect(setOmega(state, 0).omegaFactor).toBe(1.0);
  });

  it("defaults t_edit to the full horizon (the server's T)", () => {
    expect(initialState(8, SCENE).tEdit).toBe(8);
    expect(initialState(50, SCENE).tEdit).toBe(50);
  });

  it("keeps overlay opacity within [0, 1]", () => {
    const state = initialState(8, SCENE);
    expect(setOverlay(state, true, 2).overlayOpacity).toBe(1);
    expect(setOverlay(state, true, -1).overlayOpacity).toBe(0);
  });
});

describe("single in-flight job", () => {
  it("records the submission and blocks a second one", () => {
    const s0 = initialState(8, SCENE);
    const s1 = submitStarted(s0, "job-000001", payload(8));
    expect(s1.currentJobId).toBe("job-000001");
    expect(s1.history).toHaveLength(1);
    expect(() => submitStarted(s1, "job-000002", payload(8))).toThrow(/in flight/);
  });

  it("releases the slot when the job settles", () => {
    let state = submitStarted(initialState(8, SCENE), "job-000001", payload(8));
    state = jobSettled(state, "job-000001", "done", { thumbnailUrl: "x/result.png" });
    expect(state.currentJobId).toBeNull();
    expect(state.history[0]?.status).toBe("done");
    expect(state.history[0]?.thumbnailUrl).toBe("x/result.png");
  });

  it("releases the slot when the job goes stale (404)", () => {
    let state = submitStarted(initialState(8, SCENE), "job-000001", payload(8));
    state = jobStale(state, "job-000001");
    expect(state.currentJobId).toBeNull();
    expect(state.history[0]?.status).toBe("stale");
  });

  it("keeps a failed job's server error on the entry", () => {
    let state = submitStarted(initialState(8, SCENE), "job-000001", payload(8));
    state = jobSettled(state, "job-000001", "failed", { error: "EngineError: boom" });
    expect(state.history[0]?.status).toBe("failed");
    expect(state.history[0]?.error).toBe("EngineError: boom");
  });
});

describe("append-only history", () => {
  it("re-running with a lower t_edit appends a new entry, never mutating the old one", () => {
    let state: ConsoleState = initialState(8, SCENE);
    state = submitStarted(state, "job-000001", payload(8));
    state = jobSettled(state, "job-000001", "done", { thumbnailUrl: "a/result.png" });
    const firstEntry = state.history[0];

    state = submitStarted(state, "job-000002", payload(3));
    state = jobProgressed(state, "job-000002", "running");
    state = jobSettled(state, "job-000002", "done", { thumbnailUrl: "b/result.png" });

    expect(state.history).toHaveLength(2);
    expect(state.history[0]).toBe(firstEntry); // same object: untouched
    expect(state.history[0]?.payload.t_edit).toBe(8);
    expect(state.history[1]?.payload.t_edit).toBe(3);
  });

  it("progress updates replace the entry object instead of mutating it", () => {
    const s1 = submitStarted(initialState(8, SCENE), "job-000001", payload(8));
    const queued = s1.history[0];
    const s2 = jobProgressed(s1, "job-000001", "running");
    expect(queued?.status).toBe("queued"); // the old snapshot still reads queued
    expect(s2.history[0]?.status).toBe("running");
    expect(s2.history[0]).not.toBe(queued);
  });

  it("never drops entries", () => {
    let state: ConsoleState = initialState(8, SCENE);
    for (let i = 1; i <= 4; i++) {
      state = submitStarted(state, `job-00000${i}`, payload(i));
      state = jobSettled(state, `job-00000${i}`, i % 2 === 0 ? "failed" : "done");
    }
    expect(state.history.map((e) => e.jobId)).toEqual([
      "job-000001",
      "job-000002",
      "job-000003",
      "job-000004",
    ]);
  });
});
