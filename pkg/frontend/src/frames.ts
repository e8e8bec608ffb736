import { UiFrameMsg } from "./schema.js";

// Keeps frames flowing to the renderer in step order per episode and
// drops stale arrivals (an older step of the episode currently shown).

export class FrameSequencer {
  private lastEpisode = -1;
  private lastStep = -1;
  accepted = 0;
  dropped = 0;

  offer(frame: UiFrameMsg): boolean {
    if (frame.episode < this.lastEpisode) {
      this.dropped += 1;
      return false;
    }
    if (frame.episode === this.lastEpisode && frame.step <= this.lastStep) {
      this.dropped += 1;
      return false;
    }
    if (frame.episode > this.lastEpisode) {
      this.lastEpisode = frame.episode;
      this.lastStep = -1;
    }
    this.lastStep = frame.step;
    this.accepted += 1;
    return true;
  }
}
