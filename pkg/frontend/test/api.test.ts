import { describe, expect, it } from "vitest";

import { ApiError, EngineClient, isPng } from "../src/api";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("EngineClient URLs", () => {
  const client = new EngineClient("http://127.0.0.1:8787/v1/");

  it("normalizes a trailing slash on the base URL", () => {
    expect(client.baseUrl).toBe("http://127.0.0.1:8787/v1");
  });

  it("builds artifact URLs under the job id", () => {
    expect(client.resultUrl("job-000007")).toBe(
      "http://127.0.0.1:8787/v1/jobs/job-000007/result.png",
    );
    expect(client.sourceUrl("job-000007")).toBe(
      "http://127.0.0.1:8787/v1/jobs/job-000007/source.png",
    );
    expect(client.maskUrl("job-000007", 8)).toBe(
      "http://127.0.0.1:8787/v1/jobs/job-000007/mask/8.png",
    );
  });
});

describe("ApiError", () => {
  it("carries the server's field messages verbatim", async () => {
    const errors = [
      { field: "t_edit", message: "must satisfy 1 <= t_edit <= steps (8)" },
      { field: "prompt", message: "'glittery' is not an appearance attribute token" },
    ];
    const client = new EngineClient("http://host/v1", () =>
      Promise.resolve(jsonResponse(400, { schema_version: 1, errors })),
    );
    const thrown = await client
      .getJob("job-000001")
      .then(() => null)
      .catch((e: unknown) => e);
    expect(thrown).toBeInstanceOf(ApiError);
    const apiError = thrown as ApiError;
    expect(apiError.status).toBe(400);
    expect(apiError.errors).toEqual(errors); // untouched
    expect(apiError.message).toContain("must satisfy 1 <= t_edit <= steps (8)");
  });

  it("falls back to a plain HTTP message for non-JSON error bodies", async () => {
    const client = new EngineClient("http://host/v1", () =>
      Promise.resolve(new Response("gateway timeout", { status: 504 })),
    );
    const thrown = (await client.health().catch((e: unknown) => e)) as ApiError;
    expect(thrown.status).toBe(504);
    expect(thrown.errors).toEqual([{ field: "", message: "HTTP 504" }]);
  });
});

describe("response validation", () => {
  it("rejects a token listing with a malformed row", async () => {
    const client = new EngineClient("http://host/v1", () =>
      Promise.resolve(
        jsonResponse(200, {
          schema_version: 1,
          tokens: [{ name: "creature-head" }], // window and friends missing
          steps: 8,
        }),
      ),
    );
    await expect(client.listTokens()).rejects.toThrow();
  });

  it("rejects a non-PNG body where an image was promised", async () => {
    const client = new EngineClient("http://host/v1", () =>
      Promise.resolve(new Response("not an image", { status: 200 })),
    );
    await expect(client.fetchPng("http://host/v1/jobs/j/result.png")).rejects.toThrow(/PNG/);
  });

  it("validates payloads before putting them on the wire", async () => {
    let fetched = 0;
    const client = new EngineClient("http://host/v1", () => {
      fetched += 1;
      return Promise.resolve(jsonResponse(202, {}));
    });
    const bad = {
      scene: { kind: "creature", stance: "quadruped", background: "sky", attrs: [], seed: 31 },
      prompt: "with golden <creature-head>",
    };
    await expect(client.submitEdit(bad as never)).rejects.toThrow();
    expect(fetched).toBe(0);
  });
});

describe("isPng", () => {
  it("recognizes the 8-byte signature", () => {
    expect(isPng(new Uint8Array([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 1, 2]))).toBe(
      true,
    );
    expect(isPng(new Uint8Array([0xff, 0xd8, 0xff]))).toBe(false);
    expect(isPng(new Uint8Array([]))).toBe(false);
  });
});
