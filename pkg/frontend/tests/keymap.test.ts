import { describe, expect, it } from "vitest";

import { ANG_SPEED, commandFor, CONTROL_CODES, LIN_SPEED } from "../src/keymap.js";

describe("commandFor", () => {
  it("emits zero velocities with no keys pressed", () => {
    const cmd = commandFor(new Set(), false);
    expect(cmd.lin).toEqual([0, 0, 0]);
    expect(cmd.ang).toEqual([0, 0, 0]);
    expect(cmd.grip).toBe(-1);
  });

  it("maps held W to forward motion at the configured speed fraction", () => {
    const cmd = commandFor(new Set(["KeyW"]), false);
    expect(cmd.lin[0]).toBeCloseTo(LIN_SPEED, 12);
    expect(cmd.lin[1]).toBe(0);
    expect(cmd.lin[2]).toBe(0);
    expect(LIN_SPEED).toBeCloseTo(0.8 * 0.25, 12);
  });

  it("covers every bound axis with the right sign", () => {
    const expectAxis = (
      code: string,
      group: "lin" | "ang",
      axis: number,
      sign: number,
    ) => {
      const cmd = commandFor(new Set([code]), false);
      const speed = group === "lin" ? LIN_SPEED : ANG_SPEED;
      expect(cmd[group][axis]).toBeCloseTo(sign * speed, 12);
    };
    expectAxis("KeyW", "lin", 0, +1);
    expectAxis("KeyS", "lin", 0, -1);
    expectAxis("KeyA", "lin", 1, +1);
    expectAxis("KeyD", "lin", 1, -1);
    expectAxis("KeyR", "lin", 2, +1);
    expectAxis("KeyF", "lin", 2, -1);
    expectAxis("KeyQ", "ang", 0, +1);
    expectAxis("KeyE", "ang", 0, -1);
    expectAxis("ArrowUp", "ang", 1, +1);
    expectAxis("ArrowDown", "ang", 1, -1);
    expectAxis("ArrowLeft", "ang", 2, +1);
    expectAxis("ArrowRight", "ang", 2, -1);
  });

  it("cancels opposing keys", () => {
    const cmd = commandFor(new Set(["KeyW", "KeyS", "ArrowLeft", "ArrowRight"]), false);
    expect(cmd.lin).toEqual([0, 0, 0]);
    expect(cmd.ang).toEqual([0, 0, 0]);
  });

  it("combines orthogonal axes", () => {
    const cmd = commandFor(new Set(["KeyW", "KeyA", "KeyR"]), true);
    expect(cmd.lin).toEqual([LIN_SPEED, LIN_SPEED, LIN_SPEED]);
    expect(cmd.grip).toBe(1);
  });

  it("ignores unbound keys", () => {
    const cmd = commandFor(new Set(["KeyZ", "Enter"]), false);
    expect(cmd.lin).toEqual([0, 0, 0]);
    expect(cmd.ang).toEqual([0, 0, 0]);
  });

  it("declares space plus all bindings as control codes", () => {
    expect(CONTROL_CODES.has("Space")).toBe(true);
    expect(CONTROL_CODES.has("KeyW")).toBe(true);
    expect(CONTROL_CODES.has("ArrowRight")).toBe(true);
    expect(CONTROL_CODES.has("KeyZ")).toBe(false);
  });
});
