// Message payloads mirror the server's JSON-over-WebSocket schema;
// field names match the binary wire protocol one for one.

export interface UiFrameMsg {
  type: "ui_frame";
  episode: number;
  step: number;
  chunk_step: number;
  chunk_size: number;
  reward: boolean;
  policy_version: number;
  gripper: number[];
  objects: Record<string, number[]>;
  intervening: boolean;
}

export interface StatsMsg {
  type: "stats";
  step: number;
  critic_loss: number;
  edit_loss: number;
  cfm_loss: number;
  alpha: number;
  q_mean: number;
}

export interface InterventionCommand {
  type: "ui_intervene";
  engaged: boolean;
  command: number[];
  client_ts: number;
}

export type ServerMsg = UiFrameMsg | StatsMsg;

export function parseServerMsg(raw: unknown): ServerMsg | null {
  if (typeof raw !== "object" || raw === null) return null;
  const obj = raw as Record<string, unknown>;
  if (obj.type === "ui_frame") {
    if (
      typeof obj.episode !== "number" ||
      typeof obj.step !== "number" ||
      !Array.isArray(obj.gripper) ||
      typeof obj.objects !== "object"
    ) {
      return null;
    }
    return obj as unknown as UiFrameMsg;
  }
  if (obj.type === "stats") {
    if (typeof obj.step !== "number") return null;
    return obj as unknown as StatsMsg;
  }
  return null;
}

export function makeIntervention(engaged: boolean, command: number[], bound = 1.0): InterventionCommand {
  return {
    type: "ui_intervene",
    engaged,
    command: command.map((v) => Math.max(-bound, Math.min(bound, v))),
    client_ts: Date.now() / 1000,
  };
}
