/** Rectangle annotations are stored in normalized [x, y, w, h] coordinates
 * (each in [0, 1]) so they re-render correctly at any display size.
 */

export interface PixelRect {
  x: number;
  y: number;
  width: number;
  height: number;
}

export type NormalizedRect = [number, number, number, number];

const clamp01 = (v: number): number => Math.min(1, Math.max(0, v));

export function toNormalized(rect: PixelRect, imageWidth: number, imageHeight: number): NormalizedRect {
  if (imageWidth <= 0 || imageHeight <= 0) {
    throw new Error("image dimensions must be positive");
  }
  const x = clamp01(rect.x / imageWidth);
  const y = clamp01(rect.y / imageHeight);
  return [x, y, clamp01(rect.width / imageWidth + x) - x, clamp01(rect.height / imageHeight + y) - y];
}

export function toPixels(rect: NormalizedRect, displayWidth: number, displayHeight: number): PixelRect {
  const [x, y, w, h] = rect;
  return {
    x: x * displayWidth,
    y: y * displayHeight,
    width: w * displayWidth,
    height: h * displayHeight,
  };
}
