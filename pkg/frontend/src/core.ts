/** Console state machine, free of DOM and network dependencies.
 *
 * The core owns every invariant the console promises:
 *
 * - a frame is handed to onRender at most once, and only when its
 *   sequence number exceeds the last rendered one, so stale or
 *   duplicated frames never reach the screen and the rendered
 *   sequence never decreases;
 * - commands are refused while not connected;
 * - at most one command is in flight; further user actions queue and
 *   drain one per server reply, preserving order;
 * - repeat-prone actions (held-down jog keys) collapse to one send
 *   per configured rate window, so each deliberate user action
 *   appears exactly once in the bridge command log;
 * - a trial outcome is appended to the results list exactly once per
 *   trial, and the list exports as comma-separated text.
 *
 * The websocket is injected as a transport factory so all of the
 * above is testable under node with a fake transport.
 */

import {
  ClientCommand,
  ErrorReply,
  ProtocolError,
  StateFrame,
  ViewMode,
  encodeCommand,
  parseServerMessage,
} from "./protocol.js";

export type ConnectionStatus = "disconnected" | "connecting" | "connected" | "error";

export interface TransportHandlers {
  onOpen(): void;
  onMessage(text: string): void;
  onClose(reason: string): void;
  onError(message: string): void;
}

export interface Transport {
  send(text: string): void;
  close(): void;
}

export type TransportFactory = (url: string, handlers: TransportHandlers) => Transport;

export type JogDirection = "+x" | "-x" | "+y" | "-y" | "+yaw" | "-yaw";

export interface TrialResult {
  trial: number;
  outcome: string;
  residualMm: number | null;
  residualYawDeg: number | null;
  elapsedMs: number;
  brickId: number | null;
}

export interface CoreOptions {
  transportFactory: TransportFactory;
  /** Called exactly once per accepted (strictly newer) state frame. */
  onRender: (frame: StateFrame) => void;
  /** Called after any state change that is not a frame render:
   * connection status, inline errors, queue depth, results. */
  onStateChange?: () => void;
  /** Clock used for the command rate limit; defaults to Date.now. */
  now?: () => number;
  jogStepCoarseMm?: number;
  jogStepFineMm?: number;
  yawStepCoarseDeg?: number;
  yawStepFineDeg?: number;
  /** Minimum ms between sends of the same user action. */
  minCommandIntervalMs?: number;
}

export class ConsoleCore {
  status: ConnectionStatus = "disconnected";
  /** Inline error text: server rejections and transport failures. */
  lastError: string | null = null;
  /** Last rendered state frame, if any. */
  latestFrame: StateFrame | null = null;
  /** Sequence number of the last rendered frame (0 before the first). */
  renderedSeq = 0;
  /** View of the last rendered frame; jog/pick availability mirrors it. */
  view: ViewMode = "eif";
  results: TrialResult[] = [];
  /** Frames dropped by the sequence guard (stale or duplicate). */
  droppedFrames = 0;

  private readonly opts: Required<Omit<CoreOptions, "onStateChange">> & {
    onStateChange: () => void;
  };
  private transport: Transport | null = null;
  private url: string | null = null;
  private queue: string[] = [];
  private inFlight: string | null = null;
  private lastSendAt = new Map<string, number>();
  private outcomeRecorded = false;

  constructor(options: CoreOptions) {
    this.opts = {
      transportFactory: options.transportFactory,
      onRender: options.onRender,
      onStateChange: options.onStateChange ?? (() => {}),
      now: options.now ?? (() => Date.now()),
      jogStepCoarseMm: options.jogStepCoarseMm ?? 1.0,
      jogStepFineMm: options.jogStepFineMm ?? 0.1,
      yawStepCoarseDeg: options.yawStepCoarseDeg ?? 1.0,
      yawStepFineDeg: options.yawStepFineDeg ?? 0.1,
      minCommandIntervalMs: options.minCommandIntervalMs ?? 60,
    };
  }

  get pendingCount(): number {
    return this.queue.length + (this.inFlight === null ? 0 : 1);
  }

  // -- connection --------------------------------------------------------

  /** Open (or re-open) the bridge connection. The server sends the
   * first state frame unprompted; a fresh session restarts sequence
   * numbering, so the sequence guard resets here. */
  connect(url: string): void {
    if (this.transport !== null) {
      this.transport.close();
      this.transport = null;
    }
    this.url = url;
    this.status = "connecting";
    this.lastError = null;
    this.renderedSeq = 0;
    this.latestFrame = null;
    this.queue = [];
    this.inFlight = null;
    this.outcomeRecorded = false;
    try {
      this.transport = this.opts.transportFactory(url, {
        onOpen: () => {
          this.status = "connected";
          this.opts.onStateChange();
        },
        onMessage: (text) => this.handleMessage(text),
        onClose: (reason) => {
          this.status = "disconnected";
          this.transport = null;
          this.queue = [];
          this.inFlight = null;
          this.lastError = reason ? `connection closed: ${reason}` : "connection closed";
          this.opts.onStateChange();
        },
        onError: (message) => {
          this.status = "error";
          this.lastError = message;
          this.opts.onStateChange();
        },
      });
    } catch (exc) {
      this.status = "error";
      this.lastError = `connect failed: ${(exc as Error).message}`;
      this.transport = null;
    }
    this.opts.onStateChange();
  }

  disconnect(): void {
    if (this.transport !== null) {
      this.transport.close();
      this.transport = null;
    }
    this.status = "disconnected";
    this.queue = [];
    this.inFlight = null;
    this.opts.onStateChange();
  }

  /** Reconnect to the last URL; the retry path for a failed connect. */
  retry(): boolean {
    if (this.url === null) return false;
    this.connect(this.url);
    return true;
  }

  // -- user actions ------------------------------------------------------

  /** Jog one axis by the coarse (default 1 mm / 1 deg) or fine
   * (0.1 mm / 0.1 deg) step. Returns whether a command was sent or
   * queued; rate-limited per direction so key repeat collapses. */
  userJog(direction: JogDirection, fine = false): boolean {
    const t = fine
      ? this.opts.jogStepFineMm
      : this.opts.jogStepCoarseMm;
    const r = fine ? this.opts.yawStepFineDeg : this.opts.yawStepCoarseDeg;
    const deltas: Record<JogDirection, [number, number, number]> = {
      "+x": [t, 0, 0],
      "-x": [-t, 0, 0],
      "+y": [0, t, 0],
      "-y": [0, -t, 0],
      "+yaw": [0, 0, r],
      "-yaw": [0, 0, -r],
    };
    const [dx, dy, dyaw] = deltas[direction];
    return this.submit(
      { type: "jog", dx_mm: dx, dy_mm: dy, dyaw_deg: dyaw },
      `jog:${direction}:${fine ? "fine" : "coarse"}`,
    );
  }

  /** Switch between the fingertip camera and the scene view. */
  toggleView(): boolean {
    const next: ViewMode = this.view === "eif" ? "third-person" : "eif";
    return this.submit({ type: "set-view", view: next }, "set-view");
  }

  attemptPick(): boolean {
    return this.submit({ type: "attempt-pick" }, "attempt-pick");
  }

  resetTrial(): boolean {
    return this.submit({ type: "reset" }, "reset");
  }

  /** Results table as comma-separated text, one row per trial. */
  resultsCsv(): string {
    const cell = (v: number | string | null): string => (v === null ? "" : String(v));
    const lines = ["trial,outcome,residual_mm,residual_yaw_deg,elapsed_ms,brick_id"];
    for (const r of this.results) {
      lines.push(
        [r.trial, r.outcome, cell(r.residualMm), cell(r.residualYawDeg), r.elapsedMs, cell(r.brickId)].join(","),
      );
    }
    return lines.join("\n") + "\n";
  }

  // -- internals ---------------------------------------------------------

  private submit(cmd: ClientCommand, rateKey: string): boolean {
    if (this.status !== "connected" || this.transport === null) {
      this.lastError = "not connected";
      this.opts.onStateChange();
      return false;
    }
    const now = this.opts.now();
    const last = this.lastSendAt.get(rateKey);
    if (last !== undefined && now - last < this.opts.minCommandIntervalMs) {
      return false;
    }
    this.lastSendAt.set(rateKey, now);
    this.queue.push(encodeCommand(cmd));
    this.pump();
    this.opts.onStateChange();
    return true;
  }

  private pump(): void {
    if (this.inFlight !== null || this.transport === null) return;
    const next = this.queue.shift();
    if (next === undefined) return;
    this.inFlight = next;
    this.transport.send(next);
  }

  private handleMessage(text: string): void {
    let message;
    try {
      message = parseServerMessage(text);
    } catch (exc) {
      if (!(exc instanceof ProtocolError)) throw exc;
      this.lastError = exc.message;
      this.inFlight = null;
      this.pump();
      this.opts.onStateChange();
      return;
    }
    this.inFlight = null;
    if (message.type === "error") {
      this.handleErrorReply(message);
    } else {
      this.handleFrame(message);
    }
    this.pump();
    this.opts.onStateChange();
  }

  private handleErrorReply(reply: ErrorReply): void {
    this.lastError = reply.error;
  }

  private handleFrame(frame: StateFrame): void {
    if (frame.seq <= this.renderedSeq) {
      this.droppedFrames += 1;
      return;
    }
    this.renderedSeq = frame.seq;
    this.latestFrame = frame;
    this.view = frame.view;
    if (frame.outcome === null) {
      this.outcomeRecorded = false;
    } else if (!this.outcomeRecorded) {
      this.outcomeRecorded = true;
      this.results.push({
        trial: this.results.length + 1,
        outcome: frame.outcome.outcome,
        residualMm: frame.outcome.residual_mm,
        residualYawDeg: frame.outcome.residual_yaw_deg,
        elapsedMs: frame.outcome.elapsed_ms,
        brickId: frame.outcome.brick_id,
      });
    }
    this.opts.onRender(frame);
  }
}
