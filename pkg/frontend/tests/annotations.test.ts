import { describe, expect, it } from "vitest";

import { toNormalized, toPixels } from "../src/annotations.js";

describe("annotation rectangles", () => {
  it("normalizes pixel rects against the image size", () => {
    const rect = toNormalized({ x: 160, y: 90, width: 320, height: 180 }, 640, 360);
    expect(rect).toEqual([0.25, 0.25, 0.5, 0.5]);
  });

  it("round-trips through a different display size", () => {
    const normalized = toNormalized({ x: 100, y: 50, width: 200, height: 100 }, 400, 200);
    const pixels = toPixels(normalized, 800, 400);
    expect(pixels).toEqual({ x: 200, y: 100, width: 400, height: 200 });
  });

  it("clamps rects that extend past the image edge", () => {
    const rect = toNormalized({ x: 500, y: 300, width: 400, height: 200 }, 640, 360);
    expect(rect[0]).toBeCloseTo(500 / 640);
    expect(rect[1]).toBeCloseTo(300 / 360);
    expect(rect[0]! + rect[2]!).toBeLessThanOrEqual(1);
    expect(rect[1]! + rect[3]!).toBeLessThanOrEqual(1);
  });

  it("rejects non-positive image dimensions", () => {
    expect(() => toNormalized({ x: 0, y: 0, width: 1, height: 1 }, 0, 100)).toThrow();
    expect(() => toNormalized({ x: 0, y: 0, width: 1, height: 1 }, 100, -1)).toThrow();
  });
});
