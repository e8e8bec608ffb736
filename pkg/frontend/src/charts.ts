import { UiFrameMsg } from "./schema.js";

// Live training charts: rolling success rate, intervention rate (fraction
// of intervened steps), and episode time, one point per finished episode.

export interface EpisodeSummary {
  episode: number;
  steps: number;
  success: boolean;
  interventionSteps: number;
}

export interface ChartSeries {
  episodes: number[];
  successRate: number[];
  interventionRate: number[];
  episodeTimeS: number[];
}

export function rollingMean(values: number[], window: number): number[] {
  const out: number[] = [];
  let acc: number[] = [];
  for (const v of values) {
    acc.push(v);
    if (acc.length > window) acc = acc.slice(1);
    out.push(acc.reduce((a, b) => a + b, 0) / acc.length);
  }
  return out;
}

export class EpisodeTracker {
  // Folds the frame stream into per-episode summaries.
  private current: EpisodeSummary | null = null;
  readonly finished: EpisodeSummary[] = [];

  onFrame(frame: UiFrameMsg): EpisodeSummary | null {
    if (this.current !== null && frame.episode !== this.current.episode) {
      const done = this.current;
      this.finished.push(done);
      this.current = null;
      this.begin(frame);
      return done;
    }
    if (this.current === null) this.begin(frame);
    const cur = this.current!;
    cur.steps = Math.max(cur.steps, frame.step);
    if (frame.reward) cur.success = true;
    if (frame.intervening) cur.interventionSteps += 1;
    return null;
  }

  private begin(frame: UiFrameMsg) {
    this.current = {
      episode: frame.episode,
      steps: 0,
      success: false,
      interventionSteps: 0,
    };
  }
}

export function computeSeries(summaries: EpisodeSummary[], window = 10, dt = 0.1): ChartSeries {
  const success = summaries.map((s) => (s.success ? 1 : 0));
  const intervention = summaries.map((s) => (s.steps > 0 ? s.interventionSteps / s.steps : 0));
  const times = summaries.map((s) => s.steps * dt);
  return {
    episodes: summaries.map((s) => s.episode),
    successRate: rollingMean(success, window),
    interventionRate: rollingMean(intervention, window),
    episodeTimeS: rollingMean(times, window),
  };
}

export interface LinePlotTarget {
  // Minimal surface of CanvasRenderingContext2D the plots need; tests
  // substitute a recording stub.
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fillText(text: string, x: number, y: number): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  font: string;
}

export function drawSeries(
  ctx: LinePlotTarget,
  width: number,
  height: number,
  series: ChartSeries,
): void {
  ctx.clearRect(0, 0, width, height);
  const names: Array<[keyof ChartSeries, string, number]> = [
    ["successRate", "#3a7d44", 1.0],
    ["interventionRate", "#c0392b", 1.0],
    ["episodeTimeS", "#2266aa", Math.max(1, ...series.episodeTimeS)],
  ];
  let row = 0;
  for (const [key, color, scale] of names) {
    const ys = series[key] as number[];
    ctx.strokeStyle = color;
    ctx.beginPath();
    ys.forEach((y, i) => {
      const px = (i / Math.max(1, ys.length - 1)) * (width - 40) + 30;
      const py = height - 20 - (y / scale) * (height - 40);
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.fillText(String(key), 34, 14 + 12 * row);
    row += 1;
  }
}
