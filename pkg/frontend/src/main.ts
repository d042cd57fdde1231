// DOM and socket wiring for the teleop recorder page.

import { CONTROL_CODES } from "./keymap.js";
import { decodeRgb } from "./protocol.js";
import { drawFrame, FRAME_H, FRAME_W, SCALE } from "./render.js";
import { TeleopSession } from "./session.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

const canvas = byId<HTMLCanvasElement>("camera");
canvas.width = FRAME_W * SCALE;
canvas.height = FRAME_H * SCALE;
const ctx = canvas.getContext("2d");
if (!ctx) {
  throw new Error("no 2d context");
}

const urlInput = byId<HTMLInputElement>("url");
const connectBtn = byId<HTMLButtonElement>("connect");
const startBtn = byId<HTMLButtonElement>("start");
const saveBtn = byId<HTMLButtonElement>("save");
const discardBtn = byId<HTMLButtonElement>("discard");
const statusBar = byId<HTMLDivElement>("status");
const banner = byId<HTMLDivElement>("banner");

let session: TeleopSession | null = null;
let socket: WebSocket | null = null;

function refresh(): void {
  const s = session;
  if (!s) {
    startBtn.disabled = saveBtn.disabled = discardBtn.disabled = true;
    banner.textContent = "not connected";
    banner.className = "banner banner-error";
    statusBar.textContent = "";
    return;
  }
  startBtn.disabled = s.state !== "idle";
  saveBtn.disabled = s.state !== "review" || s.pendingStop;
  discardBtn.disabled = s.state !== "review" || s.pendingStop;

  if (s.state === "disconnected") {
    banner.textContent = "disconnected from service";
    banner.className = "banner banner-error";
  } else if (s.state === "review" && s.lastFrame?.success) {
    banner.textContent = "episode succeeded: save it?";
    banner.className = "banner banner-success";
  } else if (s.state === "review") {
    banner.textContent = "episode over without success: save or discard";
    banner.className = "banner banner-warn";
  } else {
    banner.textContent = "";
    banner.className = "banner";
  }

  const parts: string[] = [`state ${s.state}`];
  if (s.info) {
    parts.push(`task ${s.info.task}`);
  }
  if (s.lastFrame && s.info) {
    parts.push(`step ${s.lastFrame.time_step}/${s.info.horizon}`);
  }
  parts.push(`grip ${s.gripClosed ? "closed" : "open"}`);
  if (s.state === "review" && s.lastFrame) {
    parts.push(`success ${s.lastFrame.success}`);
  }
  if (s.savedFile) {
    parts.push(`saved ${s.savedFile}`);
  }
  if (s.lastError) {
    parts.push(`error: ${s.lastError}`);
  }
  statusBar.textContent = parts.join("  |  ");
}

function connect(): void {
  socket?.close();
  const ws = new WebSocket(urlInput.value);
  const s = new TeleopSession((line) => ws.send(line));
  s.onFrame = (frame) => drawFrame(ctx!, decodeRgb(frame.rgb));
  s.onChange = refresh;
  ws.onmessage = (ev) => s.handleLine(String(ev.data));
  ws.onclose = () => s.handleDisconnect();
  ws.onerror = () => s.handleDisconnect();
  session = s;
  socket = ws;
  refresh();
}

connectBtn.addEventListener("click", connect);
startBtn.addEventListener("click", () => session?.clickStart());
saveBtn.addEventListener("click", () => session?.clickSave());
discardBtn.addEventListener("click", () => session?.clickDiscard());

window.addEventListener("keydown", (ev) => {
  if (!CONTROL_CODES.has(ev.code)) {
    return;
  }
  ev.preventDefault();
  if (!ev.repeat) {
    session?.keyDown(ev.code);
  }
});
window.addEventListener("keyup", (ev) => {
  if (CONTROL_CODES.has(ev.code)) {
    session?.keyUp(ev.code);
  }
});

refresh();
