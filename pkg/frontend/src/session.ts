// Episode-recording state machine, kept free of DOM and socket concerns
// so it can be driven directly in tests.
//
//   idle -> recording -> review -> idle
//
// `start` is only valid in idle; review is entered when a frame arrives
// with done=true; save/discard return to idle.  Disconnection is
// terminal for the session (the app constructs a fresh one on
// reconnect).  Exactly one cmd is sent per received non-final frame and
// the client never free-runs: pacing belongs to the server.

import { commandFor } from "./keymap.js";
import {
  cmdMessage,
  parseServerMessage,
  startMessage,
  stopMessage,
  type FrameMessage,
  type InfoMessage,
} from "./protocol.js";

export type UiState = "idle" | "recording" | "review" | "disconnected";

export class TeleopSession {
  state: UiState = "idle";
  info: InfoMessage | null = null;
  lastFrame: FrameMessage | null = null;
  lastError = "";
  savedFile = "";
  gripClosed = false;
  pendingStop = false;
  readonly keys = new Set<string>();

  onFrame: (frame: FrameMessage) => void = () => {};
  onChange: () => void = () => {};

  constructor(private readonly send: (line: string) => void) {}

  handleLine(line: string): void {
    let msg;
    try {
      msg = parseServerMessage(line);
    } catch (err) {
      this.lastError = String(err instanceof Error ? err.message : err);
      this.onChange();
      return;
    }
    switch (msg.type) {
      case "info":
        this.info = msg;
        break;
      case "frame":
        this.handleFrame(msg);
        break;
      case "saved":
        this.savedFile = msg.episode_file;
        this.pendingStop = false;
        this.state = "idle";
        break;
      case "error":
        this.lastError = msg.msg;
        break;
    }
    this.onChange();
  }

  private handleFrame(frame: FrameMessage): void {
    this.lastFrame = frame;
    this.onFrame(frame);
    if (this.state !== "recording") {
      return;
    }
    if (frame.done) {
      this.state = "review";
      return;
    }
    this.send(cmdMessage(commandFor(this.keys, this.gripClosed)));
  }

  clickStart(): void {
    if (this.state !== "idle") {
      return;
    }
    this.state = "recording";
    this.gripClosed = false;
    this.savedFile = "";
    this.lastError = "";
    this.send(startMessage());
    this.onChange();
  }

  clickSave(): void {
    if (this.state !== "review" || this.pendingStop) {
      return;
    }
    this.pendingStop = true;
    this.send(stopMessage(true));
    this.onChange();
  }

  clickDiscard(): void {
    if (this.state !== "review" || this.pendingStop) {
      return;
    }
    this.send(stopMessage(false));
    this.state = "idle";
    this.onChange();
  }

  keyDown(code: string): void {
    if (code === "Space") {
      if (this.state === "recording") {
        this.gripClosed = !this.gripClosed;
        this.onChange();
      }
      return;
    }
    this.keys.add(code);
  }

  keyUp(code: string): void {
    this.keys.delete(code);
  }

  handleDisconnect(): void {
    this.state = "disconnected";
    this.keys.clear();
    this.onChange();
  }
}
