/** Typed message layer for the teleop bridge websocket protocol.
 *
 * The bridge speaks JSON text, strict request-reply: every client
 * command yields exactly one server message, either a full state frame
 * or an error reply that leaves the session untouched. This module
 * owns the wire types and the validation; nothing here touches the
 * network or the DOM.
 */

export type ViewMode = "eif" | "third-person";

export const VIEWS: readonly ViewMode[] = ["eif", "third-person"];

export interface FramePayload {
  width: number;
  height: number;
  encoding: "zlib+base64";
  /** base64 of zlib-compressed row-major uint8 grayscale pixels */
  data: string;
}

export interface ToolPose {
  x_mm: number;
  y_mm: number;
  z_mm: number;
  yaw_deg: number;
}

export interface TrialOutcome {
  outcome: string;
  residual_mm: number | null;
  residual_yaw_deg: number | null;
  elapsed_ms: number;
  brick_id: number | null;
}

export interface StateFrame {
  type: "state";
  session: string;
  seq: number;
  view: ViewMode;
  clock_ms: number;
  trial_over: boolean;
  held: boolean;
  tool: ToolPose;
  frame: FramePayload;
  digest: string;
  outcome: TrialOutcome | null;
}

export interface ErrorReply {
  type: "error";
  error: string;
  seq: number;
}

export type ServerMessage = StateFrame | ErrorReply;

export type ClientCommand =
  | { type: "jog"; dx_mm: number; dy_mm: number; dyaw_deg: number }
  | { type: "set-view"; view: ViewMode }
  | { type: "attempt-pick" }
  | { type: "reset" };

export class ProtocolError extends Error {}

function isRecord(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

function num(doc: Record<string, unknown>, key: string): number {
  const value = doc[key];
  if (typeof value !== "number" || !Number.isFinite(value)) {
    throw new ProtocolError(`field ${key} must be a finite number`);
  }
  return value;
}

function numOrNull(doc: Record<string, unknown>, key: string): number | null {
  const value = doc[key];
  if (value === null || value === undefined) return null;
  if (typeof value !== "number" || !Number.isFinite(value)) {
    throw new ProtocolError(`field ${key} must be a finite number or null`);
  }
  return value;
}

function str(doc: Record<string, unknown>, key: string): string {
  const value = doc[key];
  if (typeof value !== "string") {
    throw new ProtocolError(`field ${key} must be a string`);
  }
  return value;
}

function bool(doc: Record<string, unknown>, key: string): boolean {
  const value = doc[key];
  if (typeof value !== "boolean") {
    throw new ProtocolError(`field ${key} must be a boolean`);
  }
  return value;
}

function parseView(value: unknown): ViewMode {
  if (value !== "eif" && value !== "third-person") {
    throw new ProtocolError(`unknown view ${JSON.stringify(value)}`);
  }
  return value;
}

function parseToolPose(value: unknown): ToolPose {
  if (!isRecord(value)) throw new ProtocolError("field tool must be an object");
  return {
    x_mm: num(value, "x_mm"),
    y_mm: num(value, "y_mm"),
    z_mm: num(value, "z_mm"),
    yaw_deg: num(value, "yaw_deg"),
  };
}

function parseFramePayload(value: unknown): FramePayload {
  if (!isRecord(value)) throw new ProtocolError("field frame must be an object");
  const encoding = str(value, "encoding");
  if (encoding !== "zlib+base64") {
    throw new ProtocolError(`unsupported frame encoding ${JSON.stringify(encoding)}`);
  }
  const width = num(value, "width");
  const height = num(value, "height");
  if (!Number.isInteger(width) || !Number.isInteger(height) || width <= 0 || height <= 0) {
    throw new ProtocolError("frame dimensions must be positive integers");
  }
  return { width, height, encoding, data: str(value, "data") };
}

function parseOutcome(value: unknown): TrialOutcome | null {
  if (value === null || value === undefined) return null;
  if (!isRecord(value)) throw new ProtocolError("field outcome must be an object or null");
  return {
    outcome: str(value, "outcome"),
    residual_mm: numOrNull(value, "residual_mm"),
    residual_yaw_deg: numOrNull(value, "residual_yaw_deg"),
    elapsed_ms: num(value, "elapsed_ms"),
    brick_id: numOrNull(value, "brick_id"),
  };
}

/** Parse one server websocket message. Throws ProtocolError when the
 * text is not valid JSON or does not match the documented schema. */
export function parseServerMessage(text: string): ServerMessage {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch (exc) {
    throw new ProtocolError(`server sent invalid JSON: ${(exc as Error).message}`);
  }
  if (!isRecord(doc)) throw new ProtocolError("server message must be a JSON object");
  const kind = doc["type"];
  if (kind === "error") {
    return { type: "error", error: str(doc, "error"), seq: num(doc, "seq") };
  }
  if (kind !== "state") {
    throw new ProtocolError(`unknown server message type ${JSON.stringify(kind)}`);
  }
  const seq = num(doc, "seq");
  if (!Number.isInteger(seq) || seq < 1) {
    throw new ProtocolError("seq must be a positive integer");
  }
  return {
    type: "state",
    session: str(doc, "session"),
    seq,
    view: parseView(doc["view"]),
    clock_ms: num(doc, "clock_ms"),
    trial_over: bool(doc, "trial_over"),
    held: bool(doc, "held"),
    tool: parseToolPose(doc["tool"]),
    frame: parseFramePayload(doc["frame"]),
    digest: str(doc, "digest"),
    outcome: parseOutcome(doc["outcome"]),
  };
}

/** Serialize a client command for the wire. */
export function encodeCommand(cmd: ClientCommand): string {
  return JSON.stringify(cmd);
}
