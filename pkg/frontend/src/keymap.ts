// Keyboard-to-velocity mapping.  Commands are expressed as a fraction of
// the simulator clamps so held keys always travel at a predictable speed
// and the server-side clamp never engages during normal driving.

import type { Cmd } from "./protocol.js";

export const LIN_CLAMP = 0.25; // m/s, mirrors the simulator
export const ANG_CLAMP = 1.0; // rad/s, mirrors the simulator
export const SPEED_FRACTION = 0.8;

export const LIN_SPEED = SPEED_FRACTION * LIN_CLAMP;
export const ANG_SPEED = SPEED_FRACTION * ANG_CLAMP;

// KeyboardEvent.code -> [axis group, axis index, sign]
// lin: x forward / y left / z up; ang: roll / pitch / yaw
const BINDINGS: Record<string, ["lin" | "ang", number, number]> = {
  KeyW: ["lin", 0, +1],
  KeyS: ["lin", 0, -1],
  KeyA: ["lin", 1, +1],
  KeyD: ["lin", 1, -1],
  KeyR: ["lin", 2, +1],
  KeyF: ["lin", 2, -1],
  KeyQ: ["ang", 0, +1],
  KeyE: ["ang", 0, -1],
  ArrowUp: ["ang", 1, +1],
  ArrowDown: ["ang", 1, -1],
  ArrowLeft: ["ang", 2, +1],
  ArrowRight: ["ang", 2, -1],
};

export const CONTROL_CODES = new Set([...Object.keys(BINDINGS), "Space"]);

export function commandFor(pressed: ReadonlySet<string>, gripClosed: boolean): Cmd {
  const lin: [number, number, number] = [0, 0, 0];
  const ang: [number, number, number] = [0, 0, 0];
  for (const code of pressed) {
    const binding = BINDINGS[code];
    if (!binding) {
      continue;
    }
    const [group, axis, sign] = binding;
    if (group === "lin") {
      lin[axis] += sign * LIN_SPEED;
    } else {
      ang[axis] += sign * ANG_SPEED;
    }
  }
  return { lin, ang, grip: gripClosed ? 1 : -1 };
}
