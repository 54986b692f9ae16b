/**
 * Typed client for the /v1 engine API.
 *
 * The console talks to the engine exclusively through this class — no other
 * module builds URLs or reads response bodies. Server-side validation
 * failures surface as ApiError carrying the per-field messages verbatim;
 * the UI renders them unedited.
 */

import {
  editPayloadSchema,
  errorBodySchema,
  healthSchema,
  jobAcceptedSchema,
  jobRecordSchema,
  tokenListSchema,
  type EditPayload,
  type FieldError,
  type Health,
  type JobAccepted,
  type JobRecord,
  type TokenList,
} from "./schema";

const PNG_SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

export class ApiError extends Error {
  readonly status: number;
  /** The server's field/message pairs, untouched. */
  readonly errors: FieldError[];

  constructor(status: number, errors: FieldError[]) {
    super(errors.map((e) => (e.field ? `${e.field}: ${e.message}` : e.message)).join("; "));
    this.name = "ApiError";
    this.status = status;
    this.errors = errors;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorFromResponse(res: Response): Promise<ApiError> {
  try {
    const body = errorBodySchema.parse(await res.json());
    return new ApiError(res.status, body.errors);
  } catch {
    return new ApiError(res.status, [{ field: "", message: `HTTP ${res.status}` }]);
  }
}

export function isPng(bytes: Uint8Array): boolean {
  return PNG_SIGNATURE.every((b, i) => bytes[i] === b);
}

export class EngineClient {
  readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  /** `baseUrl` up to and including /v1, e.g. "http://127.0.0.1:8787/v1". */
  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  resultUrl(jobId: string): string {
    return `${this.baseUrl}/jobs/${jobId}/result.png`;
  }

  sourceUrl(jobId: string): string {
    return `${this.baseUrl}/jobs/${jobId}/source.png`;
  }

  maskUrl(jobId: string, t: number): string {
    return `${this.baseUrl}/jobs/${jobId}/mask/${t}.png`;
  }

  async health(): Promise<Health> {
    return healthSchema.parse(await this.getJson("/health"));
  }

  async listTokens(): Promise<TokenList> {
    return tokenListSchema.parse(await this.getJson("/tokens"));
  }

  /** Enqueue an edit; resolves with the 202 body, rejects with ApiError on 400/429. */
  async submitEdit(payload: EditPayload): Promise<JobAccepted> {
    editPayloadSchema.parse(payload); // catch console bugs before the wire
    return jobAcceptedSchema.parse(await this.postJson("/jobs/edit", payload));
  }

  async getJob(jobId: string): Promise<JobRecord> {
    return jobRecordSchema.parse(await this.getJson(`/jobs/${jobId}`));
  }

  /** Fetch a PNG artifact (result/source/mask URL); verifies the signature. */
  async fetchPng(url: string): Promise<Uint8Array> {
    const res = await this.fetchFn(url);
    if (!res.ok) {
      throw await errorFromResponse(res);
    }
    const bytes = new Uint8Array(await res.arrayBuffer());
    if (!isPng(bytes)) {
      throw new ApiError(res.status, [{ field: "", message: `${url} is not a PNG` }]);
    }
    return bytes;
  }

  /** Sample a source image for a bare scene prompt (synchronous on the server). */
  async generate(seed: number, prompt: string): Promise<Uint8Array> {
    const res = await this.fetchFn(`${this.baseUrl}/generate`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ seed, prompt }),
    });
    if (!res.ok) {
      throw await errorFromResponse(res);
    }
    const bytes = new Uint8Array(await res.arrayBuffer());
    if (!isPng(bytes)) {
      throw new ApiError(res.status, [{ field: "", message: "generate returned a non-PNG body" }]);
    }
    return bytes;
  }

  private async getJson(path: string): Promise<unknown> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`);
    if (!res.ok) {
      throw await errorFromResponse(res);
    }
    return res.json();
  }

  private async postJson(path: string, body: unknown): Promise<unknown> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) {
      throw await errorFromResponse(res);
    }
    return res.json();
  }
}
