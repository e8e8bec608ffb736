import { describe, expect, it } from "vitest";

import { EngageController, FULL_SCALE_PX, dragToCommand, initialDragState } from "../src/input.js";

describe("dragToCommand", () => {
  it("zero drag while engaged gives zero velocity", () => {
    const state = initialDragState();
    state.engaged = true;
    state.originX = state.pointerX = 100;
    state.originY = state.pointerY = 100;
    expect(dragToCommand(state, 2)).toEqual([0, 0]);
  });

  it("full-scale drag right maps to maximum x command", () => {
    const state = initialDragState();
    state.engaged = true;
    state.originX = 0;
    state.originY = 0;
    state.pointerX = FULL_SCALE_PX;
    state.pointerY = 0;
    expect(dragToCommand(state, 3)).toEqual([1, 0, 0]);
  });

  it("drag up maps to positive y (screen axis flipped)", () => {
    const state = initialDragState();
    state.engaged = true;
    state.originY = 200;
    state.pointerY = 200 - FULL_SCALE_PX / 2;
    const cmd = dragToCommand(state, 2);
    expect(cmd[1]).toBeCloseTo(0.5, 12);
  });

  it("clamps beyond full scale", () => {
    const state = initialDragState();
    state.engaged = true;
    state.pointerX = 10 * FULL_SCALE_PX;
    expect(dragToCommand(state, 2)[0]).toBe(1);
  });

  it("disengaged gives zeros", () => {
    const state = initialDragState();
    state.pointerX = 500;
    expect(dragToCommand(state, 2)).toEqual([0, 0]);
  });
});

describe("EngageController", () => {
  it("emits engaged commands while held and one release after", () => {
    const sent: Array<[boolean, number[]]> = [];
    const ctl = new EngageController(2, (engaged, command) => sent.push([engaged, command]));
    ctl.tick(); // idle: nothing
    expect(sent).toHaveLength(0);
    ctl.pointerDown(10, 10);
    ctl.pointerMove(10 + FULL_SCALE_PX, 10);
    ctl.tick();
    ctl.tick();
    ctl.pointerUp();
    ctl.tick();
    ctl.tick(); // idle again: no duplicate release
    expect(sent).toHaveLength(3);
    expect(sent[0]).toEqual([true, [1, 0]]);
    expect(sent[1]).toEqual([true, [1, 0]]);
    expect(sent[2]).toEqual([false, [0, 0]]);
  });
});
