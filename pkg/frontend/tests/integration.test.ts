// End-to-end check against the real recording service: spawns
// `mvbc serve`, drives a scripted episode over the wire, and verifies
// pacing, protocol behavior, and that the saved file passes the python
// loader's checksums.

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { existsSync, mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import WebSocket from "ws";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import {
  cmdMessage,
  decodeRgb,
  parseServerMessage,
  shutdownMessage,
  startMessage,
  stopMessage,
  type FrameMessage,
  type ServerMessage,
} from "../src/protocol.js";

const PORT = 8765 + (process.pid % 500);
const URL = `ws://localhost:${PORT}`;

class Client {
  private queue: { line: string; at: number }[] = [];
  private waiters: ((item: { line: string; at: number }) => void)[] = [];

  private constructor(readonly ws: WebSocket) {
    ws.on("message", (data) => {
      const item = { line: data.toString(), at: performance.now() };
      const waiter = this.waiters.shift();
      if (waiter) {
        waiter(item);
      } else {
        this.queue.push(item);
      }
    });
  }

  static connect(url: string): Promise<Client> {
    return new Promise((resolve, reject) => {
      const ws = new WebSocket(url);
      ws.once("open", () => resolve(new Client(ws)));
      ws.once("error", (err) => reject(err));
    });
  }

  next(timeoutMs = 15000): Promise<{ msg: ServerMessage; at: number }> {
    return new Promise((resolve, reject) => {
      const take = (item: { line: string; at: number }) => {
        clearTimeout(timer);
        resolve({ msg: parseServerMessage(item.line), at: item.at });
      };
      const timer = setTimeout(() => {
        const idx = this.waiters.indexOf(take);
        if (idx >= 0) {
          this.waiters.splice(idx, 1);
        }
        reject(new Error("timed out waiting for a server message"));
      }, timeoutMs);
      const queued = this.queue.shift();
      if (queued) {
        take(queued);
      } else {
        this.waiters.push(take);
      }
    });
  }

  send(line: string): void {
    this.ws.send(line);
  }

  close(): void {
    this.ws.close();
  }
}

function median(values: number[]): number {
  const sorted = [...values].sort((a, b) => a - b);
  return sorted[Math.floor(sorted.length / 2)];
}

let proc: ChildProcess;
let outDir: string;

beforeAll(async () => {
  outDir = mkdtempSync(join(tmpdir(), "teleop-"));
  proc = spawn(
    "mvbc",
    ["serve", "--port", String(PORT), "--task", "lift", "--views", "fixed",
     "--seed", "5", "--out", outDir],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  const deadline = Date.now() + 45000;
  for (;;) {
    try {
      const probe = await Client.connect(URL);
      probe.close();
      break;
    } catch {
      if (Date.now() > deadline) {
        throw new Error("service did not come up");
      }
      await new Promise((r) => setTimeout(r, 500));
    }
  }
}, 60000);

afterAll(async () => {
  try {
    const c = await Client.connect(URL);
    c.send(shutdownMessage());
    await new Promise((r) => setTimeout(r, 300));
    c.close();
  } catch {
    // already down
  }
  proc.kill();
});

describe("scripted teleop session", () => {
  it("records a loadable episode at 10 Hz with low round-trip latency", async () => {
    const client = await Client.connect(URL);
    try {
      await runScriptedEpisode(client);
    } finally {
      client.close();
    }
  }, 90000);

  it("rejects protocol misuse with the documented error strings", async () => {
    const client = await Client.connect(URL);
    try {
      const { msg: info } = await client.next();
      expect(info.type).toBe("info");
      client.send(stopMessage(true));
      expect((await client.next()).msg).toMatchObject({
        type: "error",
        msg: "no active episode",
      });
      client.send(startMessage());
      await client.next(); // first frame
      client.send(startMessage());
      const replies: ServerMessage[] = [];
      while (replies.length < 5) {
        const { msg } = await client.next();
        replies.push(msg);
        if (msg.type === "error") {
          break;
        }
      }
      expect(
        replies.some((m) => m.type === "error" && m.msg === "episode already active"),
      ).toBe(true);
      client.send(stopMessage(false));
    } finally {
      client.close();
    }
  }, 60000);

  async function runScriptedEpisode(client: Client): Promise<void> {
    const { msg: info } = await client.next();
    expect(info).toMatchObject({ type: "info", task: "lift", action_dim: 4 });
    if (info.type !== "info") {
      throw new Error("unreachable");
    }
    expect(info.horizon).toBeGreaterThan(50);

    // protocol round trip, measured on an immediate request/reply pair
    const rtts: number[] = [];
    for (let i = 0; i < 20; i++) {
      const t0 = performance.now();
      client.send(cmdMessage({ lin: [0, 0, 0], ang: [0, 0, 0], grip: -1 }));
      const { msg, at } = await client.next();
      expect(msg).toMatchObject({ type: "error", msg: "no active episode" });
      rtts.push(at - t0);
    }
    expect(median(rtts)).toBeLessThan(100);

    // one scripted episode: drive forward-and-down toward the object
    client.send(startMessage());
    const frames: FrameMessage[] = [];
    const arrivals: number[] = [];
    const turnarounds: number[] = [];
    for (;;) {
      const { msg, at } = await client.next();
      expect(msg.type).toBe("frame");
      if (msg.type !== "frame") {
        throw new Error("unreachable");
      }
      frames.push(msg);
      arrivals.push(at);
      const rgb = decodeRgb(msg.rgb);
      expect(rgb.length).toBe(48 * 64 * 3);
      if (msg.done || frames.length >= 50) {
        break;
      }
      client.send(cmdMessage({ lin: [0.2, 0, -0.05], ang: [0, 0, 0], grip: -1 }));
      turnarounds.push(performance.now() - at);
    }

    // strictly increasing seq with no gaps, time_step mirrors seq
    frames.forEach((f, i) => {
      expect(f.seq).toBe(i);
      expect(f.time_step).toBe(i);
    });
    expect(new Set(frames[10].rgb.split("")).size).toBeGreaterThan(1);

    // 10 Hz pacing: median inter-frame interval near the 100 ms period
    const intervals = arrivals.slice(1).map((t, i) => t - arrivals[i]);
    const midInterval = median(intervals);
    expect(midInterval).toBeGreaterThan(70);
    expect(midInterval).toBeLessThan(150);
    expect(median(turnarounds)).toBeLessThan(50);

    client.send(stopMessage(true));
    const { msg: saved } = await client.next();
    expect(saved.type).toBe("saved");
    if (saved.type !== "saved") {
      throw new Error("unreachable");
    }
    expect(saved.episode_file).toMatch(/episode_\d{4}\.mvbc$/);
    expect(existsSync(join(outDir, saved.episode_file))).toBe(true);

    // the python loader (and its checksums) must accept the recording
    const report = execFileSync(
      "python3",
      [
        "-c",
        [
          "from mvbc import dataset",
          `ds = dataset.load(r'${outDir}')`,
          "assert len(ds.episodes) == 1",
          "ep = ds.episodes[0]",
          "assert ep.rgb.shape[0] == ep.actions.shape[0]",
          "assert ep.actions.shape[0] >= 40",
          "print('loaded', ep.actions.shape[0], 'steps')",
        ].join("\n"),
      ],
      { encoding: "utf-8" },
    );
    expect(report).toContain("loaded");
  }
});
