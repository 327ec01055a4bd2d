/**
 * Line protocol v1 spoken by the antenna environment service.
 *
 * Every message is one JSON object on one UTF-8 line.  The service is
 * strict: unknown fields, missing fields, or wrongly typed values are
 * rejected, so this module validates everything it encodes before a
 * single byte leaves the process, and validates everything it decodes
 * before the caller sees it.
 */

export const PROTOCOL_VERSION = 1;

/** Catalog sizes and ranges fixed by the service-side beam model. */
export const H_CATALOG_SIZE = 6;
export const V_CATALOG_SIZE = 3;
export const DELTA_MIN = -2;
export const DELTA_MAX = 2;

export const WEIGHT_KEYS = [
  "w_coverage",
  "w_rsrp",
  "w_sinr",
  "w_dl",
  "w_ul",
] as const;

const ACTION_KEYS = [
  "h_index",
  "v_index",
  "azimuth_delta",
  "tilt_delta",
  "active",
] as const;

export interface BeamAction {
  h_index: number;
  v_index: number;
  azimuth_delta: number;
  tilt_delta: number;
  active: boolean;
}

export type RewardWeights = Partial<Record<(typeof WEIGHT_KEYS)[number], number>>;

export interface StatePayload {
  vector: number[];
  n_beams: number;
}

export type ServerMessage =
  | { type: "hello"; version: number }
  | { type: "state"; vector: number[]; n_beams: number }
  | {
      type: "transition";
      state: StatePayload;
      reward: number;
      done: boolean;
      kpis: Record<string, number>;
    }
  | { type: "error"; code: string; msg: string }
  | { type: "close" };

/** The server sent something the protocol does not allow. */
export class ProtocolError extends Error {
  constructor(msg: string) {
    super(msg);
    this.name = "ProtocolError";
  }
}

/** The caller asked the client to send something the protocol does not allow. */
export class ValidationError extends Error {
  constructor(msg: string) {
    super(msg);
    this.name = "ValidationError";
  }
}

// JSON has no NaN/Infinity, and typeof NaN === "number", so guard both ways.
function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function isInt(v: unknown): v is number {
  return typeof v === "number" && Number.isInteger(v);
}

function checkIntField(entry: Record<string, unknown>, key: string, beam: number): number {
  const v = entry[key];
  if (!isInt(v)) {
    throw new ValidationError(`action[${beam}].${key} must be an integer, got ${JSON.stringify(v)}`);
  }
  return v;
}

/**
 * Validate one beam command.  Ranges match the service catalogs; anything
 * outside them would be bounced with an "action" error, so refuse to send it.
 */
export function validateBeamAction(entry: BeamAction, beam: number): void {
  if (typeof entry !== "object" || entry === null || Array.isArray(entry)) {
    throw new ValidationError(`action[${beam}] must be an object`);
  }
  const rec = entry as unknown as Record<string, unknown>;
  for (const key of Object.keys(rec)) {
    if (!(ACTION_KEYS as readonly string[]).includes(key)) {
      throw new ValidationError(`action[${beam}] has unknown field "${key}"`);
    }
  }
  const h = checkIntField(rec, "h_index", beam);
  if (h < 0 || h >= H_CATALOG_SIZE) {
    throw new ValidationError(`action[${beam}].h_index ${h} outside [0, ${H_CATALOG_SIZE})`);
  }
  const v = checkIntField(rec, "v_index", beam);
  if (v < 0 || v >= V_CATALOG_SIZE) {
    throw new ValidationError(`action[${beam}].v_index ${v} outside [0, ${V_CATALOG_SIZE})`);
  }
  for (const key of ["azimuth_delta", "tilt_delta"] as const) {
    const d = checkIntField(rec, key, beam);
    if (d < DELTA_MIN || d > DELTA_MAX) {
      throw new ValidationError(`action[${beam}].${key} ${d} outside [${DELTA_MIN}, ${DELTA_MAX}]`);
    }
  }
  if (typeof rec.active !== "boolean") {
    throw new ValidationError(`action[${beam}].active must be a boolean`);
  }
}

export function validateAction(action: BeamAction[], expectedBeams?: number): void {
  if (!Array.isArray(action) || action.length === 0) {
    throw new ValidationError("action must be a non-empty array of beam commands");
  }
  if (expectedBeams !== undefined && action.length !== expectedBeams) {
    throw new ValidationError(
      `action has ${action.length} beam commands, environment exposes ${expectedBeams}`,
    );
  }
  action.forEach((entry, i) => validateBeamAction(entry, i));
}

export function validateWeights(weights: RewardWeights): void {
  if (typeof weights !== "object" || weights === null || Array.isArray(weights)) {
    throw new ValidationError("weights must be an object");
  }
  const rec = weights as Record<string, unknown>;
  let total = 0;
  for (const [key, value] of Object.entries(rec)) {
    if (!(WEIGHT_KEYS as readonly string[]).includes(key)) {
      throw new ValidationError(`unknown reward weight "${key}"`);
    }
    if (!isFiniteNumber(value) || value < 0) {
      throw new ValidationError(`reward weight ${key} must be a finite number >= 0`);
    }
    total += value;
  }
  // Unspecified weights default to zero on the server, so an all-zero
  // override is guaranteed to bounce with a "config" error.
  if (Object.keys(rec).length > 0 && total <= 0) {
    throw new ValidationError("reward weights must include at least one positive value");
  }
}

export function encodeHello(): string {
  return JSON.stringify({ type: "hello", version: PROTOCOL_VERSION });
}

export function encodeReset(seed: number, weights?: RewardWeights): string {
  if (!Number.isSafeInteger(seed) || seed < 0) {
    throw new ValidationError(`seed must be a non-negative integer, got ${JSON.stringify(seed)}`);
  }
  if (weights === undefined) {
    return JSON.stringify({ type: "reset", seed });
  }
  validateWeights(weights);
  return JSON.stringify({ type: "reset", seed, weights });
}

export function encodeStep(action: BeamAction[], expectedBeams?: number): string {
  validateAction(action, expectedBeams);
  const entries = action.map((a) => ({
    h_index: a.h_index,
    v_index: a.v_index,
    azimuth_delta: a.azimuth_delta,
    tilt_delta: a.tilt_delta,
    active: a.active,
  }));
  return JSON.stringify({ type: "step", action: entries });
}

export function encodeClose(): string {
  return JSON.stringify({ type: "close" });
}

function asRecord(value: unknown, what: string): Record<string, unknown> {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new ProtocolError(`${what} must be a JSON object`);
  }
  return value as Record<string, unknown>;
}

function requireKeys(rec: Record<string, unknown>, what: string, keys: string[]): void {
  const have = Object.keys(rec).sort();
  const want = [...keys].sort();
  if (have.length !== want.length || have.some((k, i) => k !== want[i])) {
    throw new ProtocolError(`${what} must have exactly fields {${want.join(", ")}}, got {${have.join(", ")}}`);
  }
}

function parseStatePayload(value: unknown, what: string): StatePayload {
  const rec = asRecord(value, what);
  requireKeys(rec, what, ["vector", "n_beams"]);
  if (!Array.isArray(rec.vector) || !rec.vector.every(isFiniteNumber)) {
    throw new ProtocolError(`${what}.vector must be an array of numbers`);
  }
  if (!isInt(rec.n_beams) || rec.n_beams < 1) {
    throw new ProtocolError(`${what}.n_beams must be a positive integer`);
  }
  return { vector: rec.vector as number[], n_beams: rec.n_beams };
}

/**
 * Decode one line from the service.  Throws ProtocolError on anything
 * that is not a well-formed server message.
 */
export function parseServerLine(line: string): ServerMessage {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch {
    throw new ProtocolError(`server line is not valid JSON: ${line.slice(0, 120)}`);
  }
  const rec = asRecord(raw, "server message");
  const mtype = rec.type;
  if (typeof mtype !== "string") {
    throw new ProtocolError('server message lacks a string "type" field');
  }
  switch (mtype) {
    case "hello": {
      requireKeys(rec, "hello", ["type", "version"]);
      if (!isInt(rec.version)) {
        throw new ProtocolError("hello.version must be an integer");
      }
      return { type: "hello", version: rec.version };
    }
    case "state": {
      requireKeys(rec, "state", ["type", "vector", "n_beams"]);
      const payload = parseStatePayload({ vector: rec.vector, n_beams: rec.n_beams }, "state");
      return { type: "state", vector: payload.vector, n_beams: payload.n_beams };
    }
    case "transition": {
      requireKeys(rec, "transition", ["type", "state", "reward", "done", "kpis"]);
      const state = parseStatePayload(rec.state, "transition.state");
      if (!isFiniteNumber(rec.reward)) {
        throw new ProtocolError("transition.reward must be a number");
      }
      if (typeof rec.done !== "boolean") {
        throw new ProtocolError("transition.done must be a boolean");
      }
      const kpisRec = asRecord(rec.kpis, "transition.kpis");
      const kpis: Record<string, number> = {};
      for (const [key, value] of Object.entries(kpisRec)) {
        if (!isFiniteNumber(value)) {
          throw new ProtocolError(`transition.kpis.${key} must be a number`);
        }
        kpis[key] = value;
      }
      return { type: "transition", state, reward: rec.reward, done: rec.done, kpis };
    }
    case "error": {
      requireKeys(rec, "error", ["type", "code", "msg"]);
      if (typeof rec.code !== "string" || typeof rec.msg !== "string") {
        throw new ProtocolError("error.code and error.msg must be strings");
      }
      return { type: "error", code: rec.code, msg: rec.msg };
    }
    case "close": {
      requireKeys(rec, "close", ["type"]);
      return { type: "close" };
    }
    default:
      throw new ProtocolError(`unknown server message type "${mtype}"`);
  }
}
