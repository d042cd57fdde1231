import { describe, expect, it } from "vitest";

import { FRAME_H, FRAME_W, nearestUpscale, rgbToRgba } from "../src/render.js";

describe("rgbToRgba", () => {
  it("interleaves alpha 255", () => {
    const rgb = new Uint8Array([10, 20, 30, 40, 50, 60]);
    const rgba = rgbToRgba(rgb, 2, 1);
    expect(Array.from(rgba)).toEqual([10, 20, 30, 255, 40, 50, 60, 255]);
  });

  it("rejects wrong byte counts for the camera frame", () => {
    expect(() => rgbToRgba(new Uint8Array(10))).toThrow(/expected/);
    expect(rgbToRgba(new Uint8Array(FRAME_W * FRAME_H * 3)).length).toBe(
      FRAME_W * FRAME_H * 4,
    );
  });
});

describe("nearestUpscale", () => {
  it("replicates each pixel into a scale x scale block", () => {
    // 2x1 image: red then green
    const rgba = new Uint8ClampedArray([255, 0, 0, 255, 0, 255, 0, 255]);
    const up = nearestUpscale(rgba, 2, 1, 2);
    const px = (x: number, y: number) => Array.from(up.slice(4 * (y * 4 + x), 4 * (y * 4 + x) + 4));
    for (const [x, y] of [[0, 0], [1, 0], [0, 1], [1, 1]] as const) {
      expect(px(x, y)).toEqual([255, 0, 0, 255]);
    }
    for (const [x, y] of [[2, 0], [3, 0], [2, 1], [3, 1]] as const) {
      expect(px(x, y)).toEqual([0, 255, 0, 255]);
    }
  });

  it("introduces no new colors (pure nearest neighbor)", () => {
    const rgba = new Uint8ClampedArray(
      [...Array(2 * 2)].flatMap((_, i) => [10 * i, 20 * i, 30 * i, 255]),
    );
    const up = nearestUpscale(rgba, 2, 2, 3);
    const colors = new Set<string>();
    for (let i = 0; i < up.length; i += 4) {
      colors.add(`${up[i]},${up[i + 1]},${up[i + 2]}`);
    }
    expect(colors).toEqual(new Set(["0,0,0", "10,20,30", "20,40,60", "30,60,90"]));
    expect(up.length).toBe(2 * 2 * 4 * 9);
  });

  it("is identity at scale 1", () => {
    const rgba = new Uint8ClampedArray([1, 2, 3, 255, 4, 5, 6, 255]);
    expect(Array.from(nearestUpscale(rgba, 2, 1, 1))).toEqual(Array.from(rgba));
  });
});
