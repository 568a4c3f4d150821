/**
 * Wire protocol dispatch shared by the stdio and HTTP transports.
 *
 * One request body in, one response body out. Anything malformed produces
 * {"ok": false, "error": "bad-request"} instead of killing the worker.
 */

import { MemorizingStudent, UnknownCheckpointError } from "./student";

export type Response =
  | { ok: true; checkpoint: string }
  | { ok: true; predictions: { item_id: string; predicted_answer: string }[] }
  | { ok: true }
  | { ok: false; error: string; message: string };

function badRequest(message: string): Response {
  return { ok: false, error: "bad-request", message };
}

function isRecord(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

function parseDatums(raw: unknown): { instruction: string; response: string }[] | null {
  if (!Array.isArray(raw)) return null;
  const out = [];
  for (const entry of raw) {
    if (!isRecord(entry)) return null;
    const { instruction, response } = entry;
    if (typeof instruction !== "string" || typeof response !== "string") return null;
    out.push({ instruction, response });
  }
  return out;
}

function parseItems(raw: unknown): { item_id: string; instruction: string }[] | null {
  if (!Array.isArray(raw)) return null;
  const out = [];
  for (const entry of raw) {
    if (!isRecord(entry)) return null;
    const { item_id, instruction } = entry;
    if (typeof item_id !== "string" || typeof instruction !== "string") return null;
    out.push({ item_id, instruction });
  }
  return out;
}

export interface DispatchResult {
  response: Response;
  shutdown: boolean;
}

export function dispatch(student: MemorizingStudent, body: unknown): DispatchResult {
  if (!isRecord(body)) {
    return { response: badRequest("request body must be a JSON object"), shutdown: false };
  }
  const op = body["op"];

  try {
    if (op === "train") {
      const checkpoint = body["checkpoint"];
      if (checkpoint !== null && typeof checkpoint !== "string") {
        return { response: badRequest("train.checkpoint must be a string or null"), shutdown: false };
      }
      const datums = parseDatums(body["datums"]);
      if (datums === null) {
        return { response: badRequest("train.datums must be a list of instruction/response pairs"), shutdown: false };
      }
      const id = student.train(checkpoint ?? null, datums);
      return { response: { ok: true, checkpoint: id }, shutdown: false };
    }

    if (op === "evaluate") {
      const checkpoint = body["checkpoint"];
      if (typeof checkpoint !== "string") {
        return { response: badRequest("evaluate.checkpoint must be a string"), shutdown: false };
      }
      const items = parseItems(body["items"]);
      if (items === null) {
        return { response: badRequest("evaluate.items must be a list of items"), shutdown: false };
      }
      return { response: { ok: true, predictions: student.evaluate(checkpoint, items) }, shutdown: false };
    }

    if (op === "shutdown") {
      return { response: { ok: true }, shutdown: true };
    }
  } catch (err) {
    if (err instanceof UnknownCheckpointError) {
      return {
        response: { ok: false, error: "unknown-checkpoint", message: err.message },
        shutdown: false,
      };
    }
    const message = err instanceof Error ? err.message : String(err);
    return { response: { ok: false, error: "internal", message }, shutdown: false };
  }

  return { response: badRequest(`unknown op: ${String(op)}`), shutdown: false };
}

export function dispatchLine(student: MemorizingStudent, line: string): DispatchResult {
  let body: unknown;
  try {
    body = JSON.parse(line);
  } catch {
    return { response: badRequest("request line is not valid JSON"), shutdown: false };
  }
  return dispatch(student, body);
}
