import { describe, expect, it } from "vitest";

import {
  cmdMessage,
  decodeRgb,
  parseServerMessage,
  ProtocolError,
  startMessage,
  stopMessage,
  shutdownMessage,
} from "../src/protocol.js";

const FRAME = {
  type: "frame",
  seq: 3,
  time_step: 3,
  rgb: "",
  ee_pose: [0, 0, 0, 1, 0, 0, 0],
  finger: [0.01, 0.01],
  done: false,
  success: false,
};

describe("parseServerMessage", () => {
  it("round-trips an info message", () => {
    const msg = parseServerMessage(
      JSON.stringify({ type: "info", task: "lift", action_dim: 4, horizon: 160 }),
    );
    expect(msg).toEqual({ type: "info", task: "lift", action_dim: 4, horizon: 160 });
  });

  it("parses a frame message", () => {
    const msg = parseServerMessage(JSON.stringify(FRAME));
    expect(msg.type).toBe("frame");
    if (msg.type === "frame") {
      expect(msg.seq).toBe(3);
      expect(msg.ee_pose).toHaveLength(7);
      expect(msg.finger).toHaveLength(2);
    }
  });

  it("parses saved and error messages", () => {
    expect(
      parseServerMessage(JSON.stringify({ type: "saved", episode_file: "episode_0000.mvbc" })),
    ).toEqual({ type: "saved", episode_file: "episode_0000.mvbc" });
    expect(parseServerMessage(JSON.stringify({ type: "error", msg: "no active episode" }))).toEqual(
      { type: "error", msg: "no active episode" },
    );
  });

  it("rejects non-JSON, unknown types, and missing fields", () => {
    expect(() => parseServerMessage("not json")).toThrow(ProtocolError);
    expect(() => parseServerMessage(JSON.stringify({ type: "nope" }))).toThrow(/unknown message/);
    expect(() => parseServerMessage(JSON.stringify({ type: "frame", seq: 1 }))).toThrow(
      ProtocolError,
    );
    expect(() =>
      parseServerMessage(JSON.stringify({ ...FRAME, ee_pose: [1, 2, 3] })),
    ).toThrow(/ee_pose/);
  });
});

describe("client messages", () => {
  it("serializes with the wire field names", () => {
    expect(JSON.parse(startMessage())).toEqual({ type: "start" });
    expect(JSON.parse(stopMessage(true))).toEqual({ type: "stop", save: true });
    expect(JSON.parse(stopMessage(false))).toEqual({ type: "stop", save: false });
    expect(JSON.parse(shutdownMessage())).toEqual({ type: "shutdown" });
    expect(JSON.parse(cmdMessage({ lin: [0.2, 0, 0], ang: [0, 0, 0], grip: -1 }))).toEqual({
      type: "cmd",
      lin: [0.2, 0, 0],
      ang: [0, 0, 0],
      grip: -1,
    });
  });
});

describe("decodeRgb", () => {
  it("decodes base64 into bytes", () => {
    const bytes = new Uint8Array([0, 1, 2, 250, 255]);
    const b64 = Buffer.from(bytes).toString("base64");
    expect(Array.from(decodeRgb(b64))).toEqual(Array.from(bytes));
  });

  it("handles the empty payload", () => {
    expect(decodeRgb("").length).toBe(0);
  });
});
