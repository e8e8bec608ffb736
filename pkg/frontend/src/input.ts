// Pointer-drag teleoperation: while the engage control is held, the drag
// vector from the press origin maps linearly to a velocity command,
// clamped to the action bounds.  Release sends a single engaged=false.

export interface DragState {
  engaged: boolean;
  originX: number;
  originY: number;
  pointerX: number;
  pointerY: number;
}

export function initialDragState(): DragState {
  return { engaged: false, originX: 0, originY: 0, pointerX: 0, pointerY: 0 };
}

// Full command magnitude at this many drag pixels.
export const FULL_SCALE_PX = 120;

export function dragToCommand(state: DragState, actionDim: number): number[] {
  const cmd = new Array<number>(actionDim).fill(0);
  if (!state.engaged) return cmd;
  const dx = (state.pointerX - state.originX) / FULL_SCALE_PX;
  // screen y grows downward; arena y grows upward
  const dy = (state.originY - state.pointerY) / FULL_SCALE_PX;
  cmd[0] = Math.max(-1, Math.min(1, dx));
  if (actionDim > 1) cmd[1] = Math.max(-1, Math.min(1, dy));
  return cmd;
}

export type CommandSink = (engaged: boolean, command: number[]) => void;

export class EngageController {
  // Tracks engage (space bar or button) + pointer, emits commands on tick.
  readonly state = initialDragState();
  private wasEngaged = false;

  constructor(
    private actionDim: number,
    private sink: CommandSink,
  ) {}

  pointerDown(x: number, y: number): void {
    this.state.originX = x;
    this.state.originY = y;
    this.state.pointerX = x;
    this.state.pointerY = y;
    this.state.engaged = true;
  }

  pointerMove(x: number, y: number): void {
    this.state.pointerX = x;
    this.state.pointerY = y;
  }

  pointerUp(): void {
    this.state.engaged = false;
  }

  tick(): void {
    if (this.state.engaged) {
      this.sink(true, dragToCommand(this.state, this.actionDim));
      this.wasEngaged = true;
    } else if (this.wasEngaged) {
      this.sink(false, new Array<number>(this.actionDim).fill(0));
      this.wasEngaged = false;
    }
  }
}
