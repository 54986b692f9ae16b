/**
 * Wire shapes of the /v1 engine API, as zod schemas.
 *
 * Every response the console consumes is parsed through one of these before
 * any code touches it, so a contract drift fails loudly at the client
 * boundary instead of as a confusing render. The schemas accept unknown
 * extra fields (additive server changes must not break deployed consoles)
 * but reject missing or mistyped ones.
 */

import { z } from "zod";

export const SCHEMA_VERSION = 1;

/** Context padding strategies and mask binarization modes the engine accepts. */
export const PAD_STRATEGIES = ["bg", "sot", "zero", "eot", "context"] as const;
export const BINARIZE_MODES = ["adaptive", "fixed-0.5", "otsu-binary"] as const;

export const sceneSchema = z.object({
  kind: z.string().min(1),
  stance: z.string().min(1).nullable(),
  background: z.string().min(1),
  attrs: z.array(z.string().min(1)).min(1),
  seed: z.number().int().nonnegative(),
});
export type Scene = z.infer<typeof sceneSchema>;

/** Body of POST /v1/jobs/edit. Optional knobs fall back to server defaults. */
export const editPayloadSchema = z.object({
  scene: sceneSchema,
  prompt: z.string().min(1),
  t_edit: z.number().int().min(1).optional(),
  omega_factor: z.number().min(1).optional(),
  guidance: z.number().positive().optional(),
  seed: z.number().int().nonnegative().optional(),
  padding: z.enum(PAD_STRATEGIES).optional(),
  binarize: z.enum(BINARIZE_MODES).optional(),
  steps: z.number().int().min(1).optional(),
  image: z.string().min(1).optional(),
});
export type EditPayload = z.infer<typeof editPayloadSchema>;

export const fieldErrorSchema = z.object({
  field: z.string(),
  message: z.string(),
});
export type FieldError = z.infer<typeof fieldErrorSchema>;

/** Every non-2xx JSON body has this shape, including validation failures. */
export const errorBodySchema = z.object({
  schema_version: z.number().int(),
  errors: z.array(fieldErrorSchema).min(1),
});

export const healthSchema = z.object({
  schema_version: z.literal(SCHEMA_VERSION),
  status: z.literal("ok"),
});
export type Health = z.infer<typeof healthSchema>;

export const tokenRowSchema = z.object({
  name: z.string().min(1),
  window: z.object({ t_start: z.number().int(), t_end: z.number().int() }),
  layers: z.array(z.number().int()),
  steps: z.number().int(),
  train_count: z.number().int(),
});
export type TokenRow = z.infer<typeof tokenRowSchema>;

/** GET /v1/tokens: trained part tokens plus the server's step count T. */
export const tokenListSchema = z.object({
  schema_version: z.literal(SCHEMA_VERSION),
  tokens: z.array(tokenRowSchema),
  steps: z.number().int().positive(),
});
export type TokenList = z.infer<typeof tokenListSchema>;

export const jobAcceptedSchema = z.object({
  schema_version: z.literal(SCHEMA_VERSION),
  job_id: z.string().min(1),
  status: z.literal("queued"),
});
export type JobAccepted = z.infer<typeof jobAcceptedSchema>;

export const JOB_STATUSES = ["queued", "running", "done", "failed"] as const;
export type JobStatus = (typeof JOB_STATUSES)[number];

/** Artifact paths relative to the job; empty until the job is done. */
export const artifactsSchema = z.object({
  result: z.string().optional(),
  source: z.string().optional(),
  receipt: z.string().optional(),
  masks: z.record(z.string(), z.string()).optional(),
});
export type Artifacts = z.infer<typeof artifactsSchema>;

export const jobRecordSchema = z.object({
  schema_version: z.literal(SCHEMA_VERSION),
  job_id: z.string().min(1),
  status: z.enum(JOB_STATUSES),
  payload: z.record(z.string(), z.unknown()),
  artifacts: artifactsSchema,
  error: z.string().nullable(),
  timings: z.object({ created: z.number() }).catchall(z.number()),
});
export type JobRecord = z.infer<typeof jobRecordSchema>;
