import { UiFrameMsg } from "./schema.js";

// Arena rendering: unit square mapped to the canvas, objects drawn by
// name, plus a chunk-progress bar and success flash.

export interface SceneTarget {
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  stroke(): void;
  fillText(text: string, x: number, y: number): void;
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  font: string;
}

const OBJECT_COLORS: Record<string, string> = {
  cue: "#f5f5f5",
  target: "#222222",
  pocket: "#6b4226",
  cube: "#cc8844",
  slot: "#888888",
};

export function drawFrame(ctx: SceneTarget, size: number, frame: UiFrameMsg): void {
  ctx.clearRect(0, 0, size, size + 24);
  ctx.fillStyle = frame.reward ? "#dcf5dc" : "#fafafa";
  ctx.fillRect(0, 0, size, size);
  ctx.strokeStyle = "#444";
  ctx.strokeRect(0, 0, size, size);

  const toPx = (v: number) => v * size;
  const toPy = (v: number) => size - v * size;

  for (const [name, pose] of Object.entries(frame.objects)) {
    ctx.fillStyle = OBJECT_COLORS[name] ?? "#999";
    ctx.beginPath();
    ctx.arc(toPx(pose[0]), toPy(pose[1]), name === "pocket" ? 12 : 7, 0, Math.PI * 2);
    ctx.fill();
    ctx.stroke();
  }

  // gripper
  ctx.fillStyle = frame.intervening ? "#d62728" : "#1f77b4";
  ctx.beginPath();
  ctx.arc(toPx(frame.gripper[0]), toPy(frame.gripper[1]), 6, 0, Math.PI * 2);
  ctx.fill();

  // chunk progress bar
  const frac = frame.chunk_size > 0 ? (frame.chunk_step + 1) / frame.chunk_size : 0;
  ctx.fillStyle = "#ddd";
  ctx.fillRect(0, size + 6, size, 8);
  ctx.fillStyle = "#1f77b4";
  ctx.fillRect(0, size + 6, size * frac, 8);

  ctx.fillStyle = "#000";
  ctx.font = "11px sans-serif";
  ctx.fillText(
    `ep ${frame.episode}  step ${frame.step}  v${frame.policy_version}` + (frame.reward ? "  SUCCESS" : ""),
    6,
    size + 22,
  );
}
