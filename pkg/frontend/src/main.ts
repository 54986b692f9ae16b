/**
 * DOM wiring for the editing console.
 *
 * Flow: pick a source (seeded render or uploaded PNG), choose a part token,
 * type an attribute, tune the t_edit / omega_factor sliders, submit. The
 * poller drives status; when the job is done the source and result render
 * side by side with the blend-mask overlay, and the scrubber flips through
 * the per-step masks. Everything pictured comes from a server artifact.
 *
 * The engine base URL defaults to the local service and can be overridden
 * with ?engine=http://host:port/v1.
 */

import { ApiError, EngineClient } from "./api";
import { canSubmit, composeEditPayload, validateDraft } from "./compose";
import { overlayMask, type Raster } from "./overlay";
import { JobPoller } from "./poll";
import type { FieldError, JobRecord, Scene, TokenList } from "./schema";
import { maskSteps, nearestMaskStep } from "./scrubber";
import {
  initialState,
  jobProgressed,
  jobSettled,
  jobStale,
  setAttribute,
  setOmega,
  setOverlay,
  setScrubStep,
  setSource,
  setTEdit,
  setToken,
  submitStarted,
  type ConsoleState,
} from "./state";

const DEFAULT_ENGINE = "http://127.0.0.1:8787/v1";
const DISPLAY_SCALE = 8; // 32px scenes drawn at 256px

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing #${id}`);
  }
  return node as T;
}

function engineBaseUrl(): string {
  return new URLSearchParams(window.location.search).get("engine") ?? DEFAULT_ENGINE;
}

function sceneFromForm(): Scene {
  const stance = el<HTMLInputElement>("scene-stance").value.trim();
  return {
    kind: el<HTMLInputElement>("scene-kind").value.trim(),
    stance: stance === "" ? null : stance,
    background: el<HTMLInputElement>("scene-background").value.trim(),
    attrs: el<HTMLInputElement>("scene-attrs")
      .value.split(",")
      .map((a) => a.trim())
      .filter((a) => a !== ""),
    seed: Number(el<HTMLInputElement>("scene-seed").value),
  };
}

/** The bare scene prompt for /generate: kind [stance] background attrs... */
function scenePromptText(scene: Scene): string {
  return [scene.kind, ...(scene.stance ? [scene.stance] : []), scene.background, ...scene.attrs]
    .join(" ");
}

function renderFieldErrors(errors: FieldError[]): string {
  return errors.map((e) => (e.field ? `${e.field}: ${e.message}` : e.message)).join("\n");
}

async function rasterFromPng(bytes: Uint8Array): Promise<Raster> {
  const bitmap = await createImageBitmap(new Blob([bytes.slice().buffer], { type: "image/png" }));
  const canvas = document.createElement("canvas");
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    throw new Error("2d canvas unavailable");
  }
  ctx.drawImage(bitmap, 0, 0);
  const data = ctx.getImageData(0, 0, bitmap.width, bitmap.height);
  return { width: data.width, height: data.height, data: data.data };
}

function drawRaster(canvas: HTMLCanvasElement, raster: Raster): void {
  canvas.width = raster.width;
  canvas.height = raster.height;
  canvas.style.width = `${raster.width * DISPLAY_SCALE}px`;
  canvas.style.height = `${raster.height * DISPLAY_SCALE}px`;
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    throw new Error("2d canvas unavailable");
  }
  ctx.putImageData(new ImageData(raster.data.slice(), raster.width, raster.height), 0, 0);
}

function base64FromBytes(bytes: Uint8Array): string {
  let binary = "";
  for (const b of bytes) {
    binary += String.fromCharCode(b);
  }
  return btoa(binary);
}

class ConsoleApp {
  private state: ConsoleState;
  private readonly client: EngineClient;
  private readonly poller: JobPoller;
  private resultRaster: Raster | null = null;
  private doneRecord: JobRecord | null = null;

  constructor(client: EngineClient, tokens: TokenList) {
    this.client = client;
    this.state = initialState(tokens.steps, sceneFromForm());
    this.poller = new JobPoller(client, {
      onUpdate: (record) => this.update(jobProgressed(this.state, record.job_id, record.status)),
      onSettled: (record) => void this.onSettled(record),
      onStale: (jobId) => {
        this.update(jobStale(this.state, jobId));
        this.setStatus(`job ${jobId} is gone from the server (marked stale)`);
      },
      onError: (jobId, error) => {
        this.update(jobSettled(this.state, jobId, "failed", { error: error.message }));
        this.setStatus(error.message);
      },
    });

    const tokenSelect = el<HTMLSelectElement>("edit-token");
    for (const row of tokens.tokens) {
      const option = document.createElement("option");
      option.value = row.name;
      option.textContent = `<${row.name}>`;
      tokenSelect.appendChild(option);
    }
    if (tokens.tokens.length > 0) {
      this.state = setToken(this.state, tokens.tokens[0]?.name ?? null);
    }

    const tEdit = el<HTMLInputElement>("edit-t");
    tEdit.max = String(tokens.steps);
    tEdit.value = String(this.state.tEdit);

    this.bindEvents();
    this.update(this.state);
  }

  private bindEvents(): void {
    el<HTMLSelectElement>("edit-token").addEventListener("change", (e) => {
      this.update(setToken(this.state, (e.target as HTMLSelectElement).value || null));
    });
    el<HTMLInputElement>("edit-attribute").addEventListener("input", (e) => {
      this.update(setAttribute(this.state, (e.target as HTMLInputElement).value));
    });
    el<HTMLInputElement>("edit-t").addEventListener("input", (e) => {
      this.update(setTEdit(this.state, Number((e.target as HTMLInputElement).value)));
    });
    el<HTMLInputElement>("edit-omega").addEventListener("input", (e) => {
      this.update(setOmega(this.state, Number((e.target as HTMLInputElement).value)));
    });
    for (const id of ["scene-kind", "scene-stance", "scene-background", "scene-attrs", "scene-seed"]) {
      el<HTMLInputElement>(id).addEventListener("input", () => this.refreshScene());
    }
    el<HTMLButtonElement>("source-preview").addEventListener("click", () => void this.preview());
    el<HTMLInputElement>("source-upload").addEventListener("change", (e) => void this.upload(e));
    el<HTMLButtonElement>("edit-submit").addEventListener("click", () => void this.submit());
    el<HTMLInputElement>("overlay-on").addEventListener("change", (e) => {
      this.update(setOverlay(this.state, (e.target as HTMLInputElement).checked));
      void this.redrawResult();
    });
    el<HTMLInputElement>("overlay-opacity").addEventListener("input", (e) => {
      this.update(setOverlay(this.state, this.state.maskOverlay, Number((e.target as HTMLInputElement).value)));
      void this.redrawResult();
    });
    el<HTMLInputElement>("mask-scrub").addEventListener("input", (e) => {
      const wanted = Number((e.target as HTMLInputElement).value);
      const steps = this.doneRecord ? maskSteps(this.doneRecord.artifacts) : [];
      this.update(setScrubStep(this.state, nearestMaskStep(steps, wanted)));
      void this.redrawResult();
    });
  }

  private refreshScene(): void {
    const scene = sceneFromForm();
    const source = this.state.source;
    this.update(setSource(
      this.state,
      source.mode === "image" ? { ...source, scene } : { mode: "seed", scene },
    ));
  }

  private update(state: ConsoleState): void {
    this.state = state;
    el<HTMLSpanElement>("edit-t-value").textContent = String(state.tEdit);
    el<HTMLSpanElement>("edit-omega-value").textContent = state.omegaFactor.toFixed(2);
    el<HTMLButtonElement>("edit-submit").disabled = !canSubmit(state);
    const problems = validateDraft(state);
    el<HTMLPreElement>("draft-problems").textContent =
      problems.length > 0 ? renderFieldErrors(problems) : "";
    this.renderHistory();
  }

  private setStatus(text: string): void {
    el<HTMLPreElement>("job-status").textContent = text;
  }

  private async preview(): Promise<void> {
    const scene = sceneFromForm();
    this.update(setSource(this.state, { mode: "seed", scene }));
    try {
      const png = await this.client.generate(scene.seed, scenePromptText(scene));
      drawRaster(el<HTMLCanvasElement>("source-canvas"), await rasterFromPng(png));
      this.setStatus("source preview rendered");
    } catch (err) {
      this.setStatus(err instanceof ApiError ? renderFieldErrors(err.errors) : String(err));
    }
  }

  private async upload(event: Event): Promise<void> {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) {
      return;
    }
    const bytes = new Uint8Array(await file.arrayBuffer());
    this.update(setSource(this.state, {
      mode: "image",
      scene: sceneFromForm(),
      imagePng: base64FromBytes(bytes),
    }));
    drawRaster(el<HTMLCanvasElement>("source-canvas"), await rasterFromPng(bytes));
    this.setStatus("uploaded image will be inverted server-side");
  }

  private async submit(): Promise<void> {
    if (!canSubmit(this.state)) {
      return;
    }
    const payload = composeEditPayload(this.state);
    try {
      const accepted = await this.client.submitEdit(payload);
      this.update(submitStarted(this.state, accepted.job_id, payload));
      this.setStatus(`${accepted.job_id}: ${accepted.status}`);
      this.poller.watch(accepted.job_id);
    } catch (err) {
      // Render the server's field messages verbatim.
      this.setStatus(err instanceof ApiError ? renderFieldErrors(err.errors) : String(err));
    }
  }

  private async onSettled(record: JobRecord): Promise<void> {
    if (record.status === "failed") {
      this.update(jobSettled(this.state, record.job_id, "failed", { error: record.error }));
      this.setStatus(`${record.job_id} failed: ${record.error ?? "unknown error"}`);
      return;
    }
    this.update(jobSettled(this.state, record.job_id, "done", {
      thumbnailUrl: this.client.resultUrl(record.job_id),
    }));
    this.doneRecord = record;
    const steps = maskSteps(record.artifacts);
    const scrub = el<HTMLInputElement>("mask-scrub");
    if (steps.length > 0) {
      scrub.min = String(steps[0]);
      scrub.max = String(steps[steps.length - 1]);
      scrub.value = String(steps[steps.length - 1]);
      scrub.disabled = false;
      this.update(setScrubStep(this.state, steps[steps.length - 1] ?? null));
    } else {
      scrub.disabled = true;
      this.update(setScrubStep(this.state, null));
    }
    this.setStatus(`${record.job_id}: done in ${record.timings["duration_s"] ?? "?"} s`);
    const [source, result] = await Promise.all([
      this.client.fetchPng(this.client.sourceUrl(record.job_id)),
      this.client.fetchPng(this.client.resultUrl(record.job_id)),
    ]);
    drawRaster(el<HTMLCanvasElement>("source-canvas"), await rasterFromPng(source));
    this.resultRaster = await rasterFromPng(result);
    await this.redrawResult();
  }

  private async redrawResult(): Promise<void> {
    if (!this.resultRaster || !this.doneRecord) {
      return;
    }
    const canvas = el<HTMLCanvasElement>("result-canvas");
    const t = this.state.scrubStep;
    el<HTMLSpanElement>("mask-scrub-value").textContent = t === null ? "-" : String(t);
    if (!this.state.maskOverlay || t === null) {
      drawRaster(canvas, this.resultRaster);
      return;
    }
    const maskPng = await this.client.fetchPng(this.client.maskUrl(this.doneRecord.job_id, t));
    const mask = await rasterFromPng(maskPng);
    drawRaster(canvas, overlayMask(this.resultRaster, mask, this.state.overlayOpacity));
  }

  private renderHistory(): void {
    const list = el<HTMLUListElement>("history");
    list.replaceChildren(
      ...this.state.history.map((entry) => {
        const item = document.createElement("li");
        const knobs = `t_edit=${entry.payload.t_edit ?? "-"} omega=${entry.payload.omega_factor ?? "-"}`;
        item.textContent = `${entry.jobId} [${entry.status}] ${entry.payload.prompt} (${knobs})`;
        if (entry.error) {
          item.textContent += ` — ${entry.error}`;
        }
        if (entry.thumbnailUrl) {
          const img = document.createElement("img");
          img.src = entry.thumbnailUrl;
          img.width = 64;
          img.height = 64;
          img.alt = `${entry.jobId} result`;
          item.appendChild(img);
        }
        return item;
      }),
    );
  }
}

async function bootstrap(): Promise<void> {
  const client = new EngineClient(engineBaseUrl());
  const status = el<HTMLPreElement>("job-status");
  try {
    await client.health();
    const tokens = await client.listTokens();
    new ConsoleApp(client, tokens);
    status.textContent = `connected to ${client.baseUrl} (T=${tokens.steps}, ${tokens.tokens.length} tokens)`;
  } catch (err) {
    status.textContent = `cannot reach the engine at ${client.baseUrl}: ${String(err)}`;
  }
}

window.addEventListener("DOMContentLoaded", () => void bootstrap());
