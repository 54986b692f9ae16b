/**
 * Edit-prompt composition and client-side draft validation.
 *
 * The prompt grammar is the engine's: one clause per edit, reading
 * "with <attribute> <part-token>". The console composes a single clause from
 * the chosen token and attribute text. Draft validation mirrors the shape
 * rules the server enforces with 400s (empty prompt, malformed clause,
 * token/scene kind mismatch, slider ranges); vocabulary checks — is "golden"
 * a known attribute? — stay server-side, and their messages render verbatim.
 */

import type { EditPayload, FieldError } from "./schema";
import { OMEGA_MAX, OMEGA_MIN, type ConsoleState } from "./state";

/** ("golden", "creature-head") -> "with golden <creature-head>" */
export function editClause(attribute: string, token: string): string {
  return `with ${attribute.trim()} <${token}>`;
}

export function composeEditPrompt(state: ConsoleState): string {
  return editClause(state.attribute, state.token ?? "");
}

/** The kind prefix of a part token name: "creature-head" -> "creature". */
export function tokenKind(token: string): string {
  return token.split("-", 1)[0] ?? "";
}

/** Field problems the server would reject this draft with; empty when clean. */
export function validateDraft(state: ConsoleState): FieldError[] {
  const errors: FieldError[] = [];
  const attribute = state.attribute.trim();
  if (state.token === null) {
    errors.push({ field: "prompt", message: "choose a part token" });
  } else if (tokenKind(state.token) !== state.source.scene.kind) {
    errors.push({
      field: "prompt",
      message: `part token '${state.token}' does not match the scene kind '${state.source.scene.kind}'`,
    });
  }
  if (attribute === "") {
    errors.push({ field: "prompt", message: "attribute must be non-empty" });
  } else if (attribute.split(/\s+/).length !== 1) {
    errors.push({ field: "prompt", message: "attribute must be a single word" });
  }
  if (!Number.isInteger(state.tEdit) || state.tEdit < 1 || state.tEdit > state.steps) {
    errors.push({ field: "t_edit", message: `must satisfy 1 <= t_edit <= steps (${state.steps})` });
  }
  if (!(state.omegaFactor >= OMEGA_MIN && state.omegaFactor <= OMEGA_MAX)) {
    errors.push({ field: "omega_factor", message: `must be within [${OMEGA_MIN}, ${OMEGA_MAX}]` });
  }
  if (state.source.scene.seed < 0 || !Number.isInteger(state.source.scene.seed)) {
    errors.push({ field: "scene.seed", message: "must be a non-negative integer" });
  }
  return errors;
}

/** Submittable iff the draft is clean and no job is in flight. */
export function canSubmit(state: ConsoleState): boolean {
  return state.currentJobId === null && validateDraft(state).length === 0;
}

/**
 * The POST /jobs/edit body for the current draft. Knobs the console does not
 * expose (guidance, padding, binarize, steps) are omitted so the server's
 * defaults apply.
 */
export function composeEditPayload(state: ConsoleState): EditPayload {
  const payload: EditPayload = {
    scene: state.source.scene,
    prompt: composeEditPrompt(state),
    t_edit: state.tEdit,
    omega_factor: state.omegaFactor,
  };
  if (state.source.mode === "image") {
    payload.image = state.source.imagePng;
  } else {
    payload.seed = state.source.scene.seed;
  }
  return payload;
}
