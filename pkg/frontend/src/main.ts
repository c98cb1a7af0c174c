/** Browser bootstrap: wires the console core to a websocket, a
 * canvas, the keyboard and the on-screen controls. Everything with
 * behavior worth testing lives in core/protocol/render; this file is
 * the thin DOM layer.
 *
 * Keyboard: arrows jog x/y, [ and ] jog yaw; hold Shift for the fine
 * step (0.1 mm / 0.1 deg instead of 1 mm / 1 deg). Key repeat is
 * collapsed by the core's rate limit, so holding a key jogs at a
 * bounded rate and each jog is logged once by the bridge.
 */

import { ConsoleCore, Transport, TransportHandlers } from "./core.js";
import { StateFrame } from "./protocol.js";
import { decodeFrameData, drawCrosshairRgba, grayscaleToRgba } from "./render.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function webSocketTransport(url: string, handlers: TransportHandlers): Transport {
  const socket = new WebSocket(url);
  socket.onopen = () => handlers.onOpen();
  socket.onmessage = (event) => handlers.onMessage(String(event.data));
  socket.onclose = (event) => handlers.onClose(event.reason);
  socket.onerror = () => handlers.onError(`cannot reach bridge at ${url}`);
  return {
    send: (text) => socket.send(text),
    close: () => socket.close(),
  };
}

function defaultBridgeUrl(): string {
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  const host = location.host || "127.0.0.1:8765";
  return `${scheme}://${host}/ws`;
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("viewport");
  const maybeCtx = canvas.getContext("2d");
  if (maybeCtx === null) throw new Error("canvas 2d context unavailable");
  const ctx = maybeCtx;
  const statusEl = el<HTMLSpanElement>("status");
  const errorEl = el<HTMLDivElement>("error-banner");
  const errorText = el<HTMLSpanElement>("error-text");
  const retryBtn = el<HTMLButtonElement>("retry");
  const infoEl = el<HTMLSpanElement>("frame-info");
  const pendingEl = el<HTMLSpanElement>("pending");
  const resultsBody = el<HTMLTableSectionElement>("results-body");
  const urlInput = el<HTMLInputElement>("bridge-url");
  const fineBox = el<HTMLInputElement>("fine-step");

  let paintToken = 0;

  async function paint(frame: StateFrame): Promise<void> {
    const token = ++paintToken;
    const pixels = await decodeFrameData(frame.frame);
    // a newer frame may have finished decoding first; never paint an
    // older raster over it
    if (token !== paintToken) return;
    const rgba = grayscaleToRgba(pixels, frame.frame.width, frame.frame.height);
    if (frame.view === "eif") {
      drawCrosshairRgba(rgba, frame.frame.width, frame.frame.height);
    }
    canvas.width = frame.frame.width;
    canvas.height = frame.frame.height;
    ctx.putImageData(new ImageData(rgba, frame.frame.width, frame.frame.height), 0, 0);
  }

  const core = new ConsoleCore({
    transportFactory: webSocketTransport,
    onRender: (frame) => {
      void paint(frame).catch((exc) => {
        core.lastError = (exc as Error).message;
        refresh();
      });
      infoEl.textContent =
        `${frame.session} seq ${frame.seq} ${frame.view} ` +
        `tool (${frame.tool.x_mm.toFixed(2)}, ${frame.tool.y_mm.toFixed(2)}) mm ` +
        `yaw ${frame.tool.yaw_deg.toFixed(1)} deg ` +
        `clock ${(frame.clock_ms / 1000).toFixed(1)} s` +
        (frame.trial_over ? " [trial over]" : "") +
        (frame.held ? " [holding]" : "");
      refresh();
    },
    onStateChange: () => refresh(),
  });

  function refresh(): void {
    statusEl.textContent = core.status;
    statusEl.dataset["state"] = core.status;
    pendingEl.textContent = String(core.pendingCount);
    if (core.lastError !== null) {
      errorText.textContent = core.lastError;
      errorEl.hidden = false;
    } else {
      errorEl.hidden = true;
    }
    resultsBody.replaceChildren(
      ...core.results.map((r) => {
        const row = document.createElement("tr");
        const cells = [
          String(r.trial),
          r.outcome,
          r.residualMm === null ? "" : r.residualMm.toFixed(3),
          r.residualYawDeg === null ? "" : r.residualYawDeg.toFixed(2),
          r.elapsedMs.toFixed(0),
          r.brickId === null ? "" : String(r.brickId),
        ];
        for (const text of cells) {
          const td = document.createElement("td");
          td.textContent = text;
          row.appendChild(td);
        }
        return row;
      }),
    );
  }

  const fine = (): boolean => fineBox.checked;
  el<HTMLButtonElement>("jog-xp").onclick = () => core.userJog("+x", fine());
  el<HTMLButtonElement>("jog-xm").onclick = () => core.userJog("-x", fine());
  el<HTMLButtonElement>("jog-yp").onclick = () => core.userJog("+y", fine());
  el<HTMLButtonElement>("jog-ym").onclick = () => core.userJog("-y", fine());
  el<HTMLButtonElement>("jog-cw").onclick = () => core.userJog("+yaw", fine());
  el<HTMLButtonElement>("jog-ccw").onclick = () => core.userJog("-yaw", fine());
  el<HTMLButtonElement>("toggle-view").onclick = () => core.toggleView();
  el<HTMLButtonElement>("attempt-pick").onclick = () => core.attemptPick();
  el<HTMLButtonElement>("reset-trial").onclick = () => core.resetTrial();
  retryBtn.onclick = () => {
    if (!core.retry()) core.connect(urlInput.value || defaultBridgeUrl());
  };
  el<HTMLButtonElement>("connect").onclick = () =>
    core.connect(urlInput.value || defaultBridgeUrl());

  el<HTMLButtonElement>("export-csv").onclick = () => {
    const blob = new Blob([core.resultsCsv()], { type: "text/csv" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = "trial-results.csv";
    link.click();
    URL.revokeObjectURL(link.href);
  };

  document.addEventListener("keydown", (event) => {
    // image y grows downward, so the up arrow jogs -y
    const map: Record<string, Parameters<ConsoleCore["userJog"]>[0]> = {
      ArrowRight: "+x",
      ArrowLeft: "-x",
      ArrowDown: "+y",
      ArrowUp: "-y",
      "]": "+yaw",
      "[": "-yaw",
    };
    const direction = map[event.key];
    if (direction !== undefined) {
      event.preventDefault();
      core.userJog(direction, event.shiftKey || fine());
    } else if (event.key === "v") {
      core.toggleView();
    } else if (event.key === "Enter") {
      core.attemptPick();
    }
  });

  urlInput.value = defaultBridgeUrl();
  core.connect(urlInput.value);
}

main();
