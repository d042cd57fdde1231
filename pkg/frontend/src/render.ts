// Camera-frame rendering: the operator must see exactly what the policy
// sees, so the 64x48 image is upscaled with nearest-neighbor and nothing
// else (no smoothing, no color mapping).

export const FRAME_W = 64;
export const FRAME_H = 48;
export const SCALE = 8;

export function rgbToRgba(
  rgb: Uint8Array,
  w = FRAME_W,
  h = FRAME_H,
): Uint8ClampedArray<ArrayBuffer> {
  if (rgb.length !== w * h * 3) {
    throw new Error(`expected ${w * h * 3} rgb bytes, got ${rgb.length}`);
  }
  const out = new Uint8ClampedArray(w * h * 4);
  for (let i = 0; i < w * h; i++) {
    out[4 * i] = rgb[3 * i];
    out[4 * i + 1] = rgb[3 * i + 1];
    out[4 * i + 2] = rgb[3 * i + 2];
    out[4 * i + 3] = 255;
  }
  return out;
}

export function nearestUpscale(
  rgba: Uint8ClampedArray,
  w: number,
  h: number,
  scale: number,
): Uint8ClampedArray<ArrayBuffer> {
  if (rgba.length !== w * h * 4) {
    throw new Error(`expected ${w * h * 4} rgba bytes, got ${rgba.length}`);
  }
  const out = new Uint8ClampedArray(w * h * 4 * scale * scale);
  const ow = w * scale;
  for (let oy = 0; oy < h * scale; oy++) {
    const sy = Math.floor(oy / scale);
    for (let ox = 0; ox < ow; ox++) {
      const sx = Math.floor(ox / scale);
      const src = 4 * (sy * w + sx);
      const dst = 4 * (oy * ow + ox);
      out[dst] = rgba[src];
      out[dst + 1] = rgba[src + 1];
      out[dst + 2] = rgba[src + 2];
      out[dst + 3] = rgba[src + 3];
    }
  }
  return out;
}

export function drawFrame(ctx: CanvasRenderingContext2D, rgb: Uint8Array): void {
  const upscaled = nearestUpscale(rgbToRgba(rgb), FRAME_W, FRAME_H, SCALE);
  const image = new ImageData(upscaled, FRAME_W * SCALE, FRAME_H * SCALE);
  ctx.putImageData(image, 0, 0);
}
