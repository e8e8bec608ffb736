import { EpisodeTracker, computeSeries, drawSeries } from "./charts.js";
import { FrameSequencer } from "./frames.js";
import { EngageController } from "./input.js";
import { drawFrame } from "./render.js";
import { makeIntervention, parseServerMsg, UiFrameMsg } from "./schema.js";

const ARENA_SIZE = 420;
const COMMAND_HZ = 10;

function wsUrl(): string {
  const proto = location.protocol === "https:" ? "wss:" : "ws:";
  return `${proto}//${location.host}/ws`;
}

function main(): void {
  const arena = document.getElementById("arena") as HTMLCanvasElement;
  const chart = document.getElementById("charts") as HTMLCanvasElement;
  const status = document.getElementById("status") as HTMLDivElement;
  const arenaCtx = arena.getContext("2d")!;
  const chartCtx = chart.getContext("2d")!;

  const sequencer = new FrameSequencer();
  const tracker = new EpisodeTracker();
  let lastFrame: UiFrameMsg | null = null;
  let actionDim = 2;

  const socket = new WebSocket(wsUrl());
  socket.addEventListener("open", () => {
    status.textContent = "connected — hold the canvas (or space) and drag to intervene";
    status.className = "ok";
  });
  socket.addEventListener("close", () => {
    status.textContent = "disconnected — intervention input disabled";
    status.className = "bad";
  });
  socket.addEventListener("error", () => {
    status.textContent = "socket error — intervention input disabled";
    status.className = "bad";
  });

  socket.addEventListener("message", (event) => {
    let obj: unknown;
    try {
      obj = JSON.parse(event.data as string);
    } catch (e) {
      console.warn("malformed frame skipped", e);
      return;
    }
    const msg = parseServerMsg(obj);
    if (msg === null) {
      console.warn("unknown message skipped", obj);
      return;
    }
    if (msg.type === "ui_frame") {
      if (!sequencer.offer(msg)) return;
      lastFrame = msg;
      tracker.onFrame(msg);
      drawFrame(arenaCtx, ARENA_SIZE, msg);
      if (tracker.finished.length > 0) {
        drawSeries(chartCtx, chart.width, chart.height, computeSeries(tracker.finished));
      }
    }
  });

  const controller = new EngageController(actionDim, (engaged, command) => {
    if (socket.readyState === WebSocket.OPEN) {
      socket.send(JSON.stringify(makeIntervention(engaged, command)));
    }
  });

  arena.addEventListener("pointerdown", (e) => {
    arena.setPointerCapture(e.pointerId);
    controller.pointerDown(e.offsetX, e.offsetY);
  });
  arena.addEventListener("pointermove", (e) => controller.pointerMove(e.offsetX, e.offsetY));
  arena.addEventListener("pointerup", () => controller.pointerUp());
  arena.addEventListener("pointercancel", () => controller.pointerUp());

  window.setInterval(() => controller.tick(), 1000 / COMMAND_HZ);
}

window.addEventListener("load", main);
