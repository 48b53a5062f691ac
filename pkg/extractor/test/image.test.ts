import { describe, expect, test } from "vitest";
import { decodeImage, resizeBilinear } from "../dist/image.js";
import { makeJpeg, makePgm, makePng, makePngFrom, makePpm } from "./helpers";

describe("decodeImage", () => {
  test("png alpha composites over white", () => {
    const img = decodeImage(makePng(2, 2, [0, 0, 0, 0]));
    expect(img.width).toBe(2);
    expect(Array.from(img.data.slice(0, 3))).toEqual([255, 255, 255]);

    // (128*0 + 127*255) / 255 = 127
    const half = decodeImage(makePng(1, 1, [0, 0, 0, 128]));
    expect(Array.from(half.data)).toEqual([127, 127, 127]);
  });

  test("ppm and pgm parse, comments included", () => {
    const rgb = Uint8Array.from([10, 20, 30, 40, 50, 60]);
    const img = decodeImage(makePpm(2, 1, rgb));
    expect(img.width).toBe(2);
    expect(img.height).toBe(1);
    expect(Array.from(img.data)).toEqual(Array.from(rgb));

    const withComment = Buffer.concat([
      Buffer.from("P6\n# fixture\n2 1\n255\n"),
      Buffer.from(rgb),
    ]);
    expect(Array.from(decodeImage(withComment).data)).toEqual(Array.from(rgb));

    const gray = decodeImage(makePgm(1, 2, Uint8Array.from([7, 200])));
    expect(Array.from(gray.data)).toEqual([7, 7, 7, 200, 200, 200]);
  });

  test("jpeg decodes approximately", () => {
    const img = decodeImage(makeJpeg(8, 8, [200, 30, 30, 255]));
    expect(img.width).toBe(8);
    expect(Math.abs(img.data[0] - 200)).toBeLessThan(16);
    expect(Math.abs(img.data[1] - 30)).toBeLessThan(16);
  });

  test("garbage and truncation are rejected", () => {
    expect(() => decodeImage(Buffer.from("not an image at all"))).toThrow(/unsupported/);
    const short = makePpm(4, 4, new Uint8Array(48)).subarray(0, 20);
    expect(() => decodeImage(Buffer.from(short))).toThrow(/truncated/);
    expect(() => decodeImage(Buffer.from("P6\n2 1\n70000\nxxxxxx"))).toThrow(/maxval/);
  });
});

describe("resizeBilinear", () => {
  test("constant image stays constant", () => {
    const img = decodeImage(makePng(3, 5, [90, 120, 33, 255]));
    const out = resizeBilinear(img, 7, 2);
    for (let i = 0; i < out.data.length; i += 3) {
      expect(Array.from(out.data.slice(i, i + 3))).toEqual([90, 120, 33]);
    }
  });

  test("2x1 gradient upsamples with half-pixel centres", () => {
    const img = { width: 2, height: 1, data: Uint8Array.from([0, 0, 0, 255, 255, 255]) };
    const out = resizeBilinear(img, 4, 1);
    const reds = [0, 1, 2, 3].map((x) => out.data[x * 3]);
    expect(reds).toEqual([0, 64, 191, 255]);
  });

  test("downsample averages the right neighbourhood", () => {
    // left half black, right half white; 4x1 -> 2x1 lands on pixel centres
    const img = { width: 4, height: 1, data: Uint8Array.from([0, 0, 0, 0, 0, 0, 255, 255, 255, 255, 255, 255]) };
    const out = resizeBilinear(img, 2, 1);
    expect(out.data[0]).toBe(0);
    expect(out.data[3]).toBe(255);
  });
});

describe("alpha handling end to end", () => {
  test("checkerboard alpha yields mixed composite", () => {
    const buf = makePngFrom(2, 2, (x, y) => ((x + y) % 2 === 0 ? [0, 0, 0, 255] : [0, 0, 0, 0]));
    const img = decodeImage(buf);
    expect(Array.from(img.data)).toEqual([0, 0, 0, 255, 255, 255, 255, 255, 255, 0, 0, 0]);
  });
});
