/** Console core invariants, driven through a fake transport.
 *
 * The bridge is strict request-reply, so the fake feeds server
 * messages by calling the handlers the core registered; no sockets,
 * no timers. The clock is injected so rate-limit windows are exact.
 */

import { describe, expect, it } from "vitest";
import { ConsoleCore, CoreOptions, Transport, TransportHandlers } from "../src/core.js";

class FakeTransport implements Transport {
  sent: string[] = [];
  closed = false;
  constructor(
    readonly url: string,
    readonly handlers: TransportHandlers,
  ) {}
  send(text: string): void {
    this.sent.push(text);
  }
  close(): void {
    this.closed = true;
  }
}

function frameDoc(seq: number, overrides: Record<string, unknown> = {}): Record<string, unknown> {
  return {
    type: "state",
    session: "s1",
    seq,
    view: "eif",
    clock_ms: 1000.0 * seq,
    trial_over: false,
    held: false,
    tool: { x_mm: 0.0, y_mm: 0.0, z_mm: 39.6, yaw_deg: 0.0 },
    frame: { width: 2, height: 2, encoding: "zlib+base64", data: "eJxjYGBgAAAABAAB" },
    digest: "0".repeat(64),
    outcome: null,
    ...overrides,
  };
}

const OUTCOME = {
  outcome: "success",
  residual_mm: 0.31,
  residual_yaw_deg: 0.8,
  elapsed_ms: 2500.0,
  brick_id: 1,
};

interface Harness {
  core: ConsoleCore;
  transport: FakeTransport;
  rendered: number[];
  push(doc: Record<string, unknown>): void;
  pushText(text: string): void;
  tick(ms: number): void;
  sentTypes(): string[];
}

function harness(overrides: Partial<CoreOptions> = {}, connect = true): Harness {
  let transport: FakeTransport | null = null;
  const rendered: number[] = [];
  let clock = 0;
  const core = new ConsoleCore({
    transportFactory: (url, handlers) => {
      transport = new FakeTransport(url, handlers);
      return transport;
    },
    onRender: (frame) => rendered.push(frame.seq),
    now: () => clock,
    minCommandIntervalMs: 50,
    ...overrides,
  });
  if (connect) {
    core.connect("ws://test/ws");
    transport!.handlers.onOpen();
  }
  return {
    core,
    get transport() {
      return transport!;
    },
    rendered,
    push: (doc) => transport!.handlers.onMessage(JSON.stringify(doc)),
    pushText: (text) => transport!.handlers.onMessage(text),
    tick: (ms) => {
      clock += ms;
    },
    sentTypes: () => transport!.sent.map((t) => (JSON.parse(t) as { type: string }).type),
  };
}

describe("frame rendering", () => {
  it("hands each frame to the renderer exactly once, in order", () => {
    const h = harness();
    h.push(frameDoc(1));
    h.push(frameDoc(2));
    h.push(frameDoc(3));
    expect(h.rendered).toEqual([1, 2, 3]);
    expect(h.core.renderedSeq).toBe(3);
  });

  it("drops duplicate and stale frames", () => {
    const h = harness();
    h.push(frameDoc(1));
    h.push(frameDoc(2));
    h.push(frameDoc(2));
    h.push(frameDoc(1));
    expect(h.rendered).toEqual([1, 2]);
    expect(h.core.droppedFrames).toBe(2);
    expect(h.core.latestFrame?.seq).toBe(2);
  });

  it("never renders a frame older than one already shown", () => {
    const h = harness();
    for (const seq of [1, 3, 2, 5, 4, 6]) h.push(frameDoc(seq));
    expect(h.rendered).toEqual([1, 3, 5, 6]);
    for (let i = 1; i < h.rendered.length; i++) {
      expect(h.rendered[i]!).toBeGreaterThan(h.rendered[i - 1]!);
    }
  });

  it("resets the sequence guard for a fresh connection", () => {
    const h = harness();
    h.push(frameDoc(1));
    h.push(frameDoc(2));
    h.core.connect("ws://test/ws");
    h.transport.handlers.onOpen();
    h.push(frameDoc(1));
    expect(h.rendered).toEqual([1, 2, 1]);
    expect(h.core.renderedSeq).toBe(1);
  });
});

describe("connection gating", () => {
  it("refuses commands while disconnected", () => {
    const h = harness({}, false);
    expect(h.core.status).toBe("disconnected");
    expect(h.core.userJog("+x")).toBe(false);
    expect(h.core.attemptPick()).toBe(false);
    expect(h.core.lastError).toBe("not connected");
    expect(h.core.pendingCount).toBe(0);
  });

  it("refuses commands while still connecting", () => {
    const h = harness({}, false);
    h.core.connect("ws://test/ws");
    expect(h.core.status).toBe("connecting");
    expect(h.core.userJog("+x")).toBe(false);
    expect(h.transport.sent).toEqual([]);
  });

  it("surfaces a visible error when the bridge is unreachable and retries", () => {
    let attempts = 0;
    let transport: FakeTransport | null = null;
    const core = new ConsoleCore({
      transportFactory: (url, handlers) => {
        attempts += 1;
        if (attempts === 1) throw new Error("connection refused");
        transport = new FakeTransport(url, handlers);
        return transport;
      },
      onRender: () => {},
    });
    core.connect("ws://test/ws");
    expect(core.status).toBe("error");
    expect(core.lastError).toContain("connection refused");
    expect(core.retry()).toBe(true);
    transport!.handlers.onOpen();
    expect(core.status).toBe("connected");
    expect(core.lastError).toBeNull();
  });

  it("marks transport errors without losing the session state", () => {
    const h = harness();
    h.push(frameDoc(1));
    h.transport.handlers.onError("cannot reach bridge");
    expect(h.core.status).toBe("error");
    expect(h.core.lastError).toBe("cannot reach bridge");
    expect(h.core.latestFrame?.seq).toBe(1);
  });

  it("clears pending work on close and disables commands", () => {
    const h = harness();
    h.core.userJog("+x");
    expect(h.core.pendingCount).toBe(1);
    h.transport.handlers.onClose("going away");
    expect(h.core.status).toBe("disconnected");
    expect(h.core.pendingCount).toBe(0);
    expect(h.core.lastError).toContain("going away");
    expect(h.core.userJog("+x")).toBe(false);
  });
});

describe("command flow", () => {
  it("keeps at most one command in flight and drains in order", () => {
    const h = harness();
    expect(h.core.userJog("+x")).toBe(true);
    h.tick(60);
    expect(h.core.toggleView()).toBe(true);
    h.tick(60);
    expect(h.core.attemptPick()).toBe(true);
    expect(h.transport.sent).toHaveLength(1);
    expect(h.core.pendingCount).toBe(3);
    h.push(frameDoc(1));
    expect(h.transport.sent).toHaveLength(2);
    h.push(frameDoc(2, { view: "third-person" }));
    expect(h.transport.sent).toHaveLength(3);
    expect(h.sentTypes()).toEqual(["jog", "set-view", "attempt-pick"]);
    h.push(frameDoc(3, { view: "third-person", trial_over: true, outcome: OUTCOME }));
    expect(h.core.pendingCount).toBe(0);
  });

  it("collapses key repeat to one send per rate window", () => {
    const h = harness();
    expect(h.core.userJog("+x")).toBe(true);
    h.tick(10);
    expect(h.core.userJog("+x")).toBe(false);
    h.tick(10);
    expect(h.core.userJog("+x")).toBe(false);
    h.tick(50);
    expect(h.core.userJog("+x")).toBe(true);
    expect(h.core.pendingCount).toBe(2);
  });

  it("does not rate-limit distinct actions against each other", () => {
    const h = harness();
    expect(h.core.userJog("+x")).toBe(true);
    expect(h.core.userJog("-x")).toBe(true);
    expect(h.core.userJog("+x", true)).toBe(true);
    expect(h.core.toggleView()).toBe(true);
    expect(h.core.pendingCount).toBe(4);
  });

  it("sends the configured coarse and fine jog steps", () => {
    const h = harness();
    h.core.userJog("+x");
    h.push(frameDoc(1));
    h.core.userJog("-y", true);
    h.push(frameDoc(2));
    h.core.userJog("-yaw");
    const sent = h.transport.sent.map((t) => JSON.parse(t) as Record<string, number>);
    expect(sent[0]).toEqual({ type: "jog", dx_mm: 1.0, dy_mm: 0.0, dyaw_deg: 0.0 });
    expect(sent[1]).toEqual({ type: "jog", dx_mm: 0.0, dy_mm: -0.1, dyaw_deg: 0.0 });
    expect(sent[2]).toEqual({ type: "jog", dx_mm: 0.0, dy_mm: 0.0, dyaw_deg: -1.0 });
  });

  it("renders nothing on an error reply but shows it inline and drains the queue", () => {
    const h = harness();
    h.core.attemptPick();
    h.tick(60);
    h.core.userJog("+x");
    expect(h.transport.sent).toHaveLength(1);
    h.push({ type: "error", error: "trial ended; send reset to start a new one", seq: 4 });
    expect(h.rendered).toEqual([]);
    expect(h.core.lastError).toBe("trial ended; send reset to start a new one");
    expect(h.transport.sent).toHaveLength(2);
    expect(h.core.pendingCount).toBe(1);
  });

  it("reports malformed server traffic inline and keeps the session", () => {
    const h = harness();
    h.pushText("this is not json");
    expect(h.core.lastError).toContain("invalid JSON");
    expect(h.core.status).toBe("connected");
    h.push(frameDoc(1));
    expect(h.rendered).toEqual([1]);
  });
});

describe("trial results", () => {
  it("appends one row per trial even though the outcome repeats in frames", () => {
    const h = harness();
    h.push(frameDoc(1));
    h.push(frameDoc(2, { trial_over: true, outcome: OUTCOME }));
    h.push(frameDoc(3, { trial_over: true, outcome: OUTCOME }));
    expect(h.core.results).toHaveLength(1);
    h.push(frameDoc(4));
    h.push(
      frameDoc(5, {
        trial_over: true,
        outcome: { ...OUTCOME, outcome: "miss", residual_mm: 12.5, brick_id: null },
      }),
    );
    expect(h.core.results).toHaveLength(2);
    expect(h.core.results.map((r) => r.trial)).toEqual([1, 2]);
  });

  it("carries elapsed time and residual into the row", () => {
    const h = harness();
    h.push(frameDoc(1, { trial_over: true, outcome: OUTCOME }));
    const row = h.core.results[0]!;
    expect(row.outcome).toBe("success");
    expect(row.elapsedMs).toBe(2500.0);
    expect(row.residualMm).toBe(0.31);
    expect(row.residualYawDeg).toBe(0.8);
    expect(row.brickId).toBe(1);
  });

  it("exports comma-separated text with empty cells for missing values", () => {
    const h = harness();
    h.push(frameDoc(1, { trial_over: true, outcome: OUTCOME }));
    h.push(frameDoc(2));
    h.push(
      frameDoc(3, {
        trial_over: true,
        outcome: {
          outcome: "miss",
          residual_mm: null,
          residual_yaw_deg: null,
          elapsed_ms: 100.5,
          brick_id: null,
        },
      }),
    );
    expect(h.core.resultsCsv()).toBe(
      "trial,outcome,residual_mm,residual_yaw_deg,elapsed_ms,brick_id\n" +
        "1,success,0.31,0.8,2500,1\n" +
        "2,miss,,,100.5,\n",
    );
  });
});

describe("view switching", () => {
  it("requests the opposite view and follows the server's answer", () => {
    const h = harness();
    h.push(frameDoc(1));
    expect(h.core.view).toBe("eif");
    h.core.toggleView();
    expect(JSON.parse(h.transport.sent[0]!)).toEqual({ type: "set-view", view: "third-person" });
    h.push(frameDoc(2, { view: "third-person" }));
    expect(h.core.view).toBe("third-person");
    h.tick(60);
    h.core.toggleView();
    expect(JSON.parse(h.transport.sent[1]!)).toEqual({ type: "set-view", view: "eif" });
  });
});
