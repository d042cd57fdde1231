// Message protocol spoken by the recording service: UTF-8 JSON, one
// message per line, over a persistent WebSocket.

export interface InfoMessage {
  type: "info";
  task: string;
  action_dim: number;
  horizon: number;
}

export interface FrameMessage {
  type: "frame";
  seq: number;
  time_step: number;
  rgb: string; // base64 of 48x64x3 u8, row-major
  ee_pose: number[]; // 7 numbers: position xyz + quaternion wxyz
  finger: number[]; // 2 numbers
  done: boolean;
  success: boolean;
}

export interface SavedMessage {
  type: "saved";
  episode_file: string;
}

export interface ErrorMessage {
  type: "error";
  msg: string;
}

export type ServerMessage = InfoMessage | FrameMessage | SavedMessage | ErrorMessage;

export interface Cmd {
  lin: [number, number, number];
  ang: [number, number, number];
  grip: number;
}

export class ProtocolError extends Error {}

function expect(cond: boolean, what: string): void {
  if (!cond) {
    throw new ProtocolError(`malformed server message: ${what}`);
  }
}

export function parseServerMessage(line: string): ServerMessage {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch {
    throw new ProtocolError("not valid JSON");
  }
  expect(typeof raw === "object" && raw !== null, "not an object");
  const msg = raw as Record<string, unknown>;
  switch (msg.type) {
    case "info":
      expect(typeof msg.task === "string", "info.task");
      expect(typeof msg.action_dim === "number", "info.action_dim");
      expect(typeof msg.horizon === "number", "info.horizon");
      return msg as unknown as InfoMessage;
    case "frame":
      expect(typeof msg.seq === "number", "frame.seq");
      expect(typeof msg.time_step === "number", "frame.time_step");
      expect(typeof msg.rgb === "string", "frame.rgb");
      expect(Array.isArray(msg.ee_pose) && msg.ee_pose.length === 7, "frame.ee_pose");
      expect(Array.isArray(msg.finger) && msg.finger.length === 2, "frame.finger");
      expect(typeof msg.done === "boolean", "frame.done");
      expect(typeof msg.success === "boolean", "frame.success");
      return msg as unknown as FrameMessage;
    case "saved":
      expect(typeof msg.episode_file === "string", "saved.episode_file");
      return msg as unknown as SavedMessage;
    case "error":
      expect(typeof msg.msg === "string", "error.msg");
      return msg as unknown as ErrorMessage;
    default:
      throw new ProtocolError(`unknown message type ${String(msg.type)}`);
  }
}

export function startMessage(): string {
  return JSON.stringify({ type: "start" });
}

export function cmdMessage(cmd: Cmd): string {
  return JSON.stringify({ type: "cmd", lin: cmd.lin, ang: cmd.ang, grip: cmd.grip });
}

export function stopMessage(save: boolean): string {
  return JSON.stringify({ type: "stop", save });
}

export function shutdownMessage(): string {
  return JSON.stringify({ type: "shutdown" });
}

export function decodeRgb(b64: string): Uint8Array {
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) {
    out[i] = bin.charCodeAt(i);
  }
  return out;
}
