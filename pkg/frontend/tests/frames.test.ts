import { describe, expect, it } from "vitest";

import { FrameSequencer } from "../src/frames.js";
import { UiFrameMsg } from "../src/schema.js";

function frame(episode: number, step: number): UiFrameMsg {
  return {
    type: "ui_frame",
    episode,
    step,
    chunk_step: step % 8,
    chunk_size: 8,
    reward: false,
    policy_version: 1,
    gripper: [0.5, 0.5],
    objects: {},
    intervening: false,
  };
}

describe("FrameSequencer", () => {
  it("accepts frames in order", () => {
    const seq = new FrameSequencer();
    expect(seq.offer(frame(0, 1))).toBe(true);
    expect(seq.offer(frame(0, 2))).toBe(true);
    expect(seq.offer(frame(1, 1))).toBe(true);
    expect(seq.accepted).toBe(3);
  });

  it("drops an out-of-order frame without advancing", () => {
    const seq = new FrameSequencer();
    seq.offer(frame(0, 5));
    const before = seq.accepted;
    expect(seq.offer(frame(0, 3))).toBe(false);
    expect(seq.accepted).toBe(before);
    expect(seq.dropped).toBe(1);
  });

  it("drops duplicate steps", () => {
    const seq = new FrameSequencer();
    seq.offer(frame(2, 7));
    expect(seq.offer(frame(2, 7))).toBe(false);
  });

  it("drops frames from a previous episode", () => {
    const seq = new FrameSequencer();
    seq.offer(frame(3, 1));
    expect(seq.offer(frame(2, 99))).toBe(false);
  });

  it("renders at least 590 of 600 frames with sparse disorder", () => {
    // playback harness: a mostly ordered stream with occasional stale
    // duplicates injected (network jitter)
    const seq = new FrameSequencer();
    let rendered = 0;
    let sent = 0;
    for (let ep = 0; ep < 6; ep++) {
      for (let step = 1; step <= 100; step++) {
        sent += 1;
        if (seq.offer(frame(ep, step))) rendered += 1;
        if (step % 37 === 0) {
          // stale duplicate arrives late; it must be dropped, not rendered
          seq.offer(frame(ep, step - 1));
        }
      }
    }
    expect(sent).toBe(600);
    expect(rendered).toBeGreaterThanOrEqual(590);
    expect(rendered).toBe(600); // the ordered subset all renders, in order
  });
});
