// Image loading: PNG, JPEG and binary PNM (P5/P6) to packed 8-bit RGB,
// with alpha composited over white. Format is sniffed from magic bytes,
// never from the file name.

import { PNG } from "pngjs";
import jpeg from "jpeg-js";

export interface RgbImage {
  width: number;
  height: number;
  /** row-major packed r,g,b */
  data: Uint8Array;
}

function fromRgba(width: number, height: number, rgba: Uint8Array): RgbImage {
  const n = width * height;
  const out = new Uint8Array(n * 3);
  for (let i = 0; i < n; i++) {
    const a = rgba[i * 4 + 3];
    for (let c = 0; c < 3; c++) {
      const px = rgba[i * 4 + c];
      // composite over a white background
      out[i * 3 + c] = Math.round((a * px + (255 - a) * 255) / 255);
    }
  }
  return { width, height, data: out };
}

function parsePnm(buf: Buffer): RgbImage {
  // header: magic, width, height, maxval as whitespace-separated tokens,
  // # comments run to end of line, then a single whitespace byte and the
  // raw samples
  let pos = 2;
  const tokens: number[] = [];
  while (tokens.length < 3) {
    if (pos >= buf.length) throw new Error("truncated pnm header");
    const ch = buf[pos];
    if (ch === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      pos++;
    } else if (ch === 0x20 || ch === 0x09 || ch === 0x0a || ch === 0x0d) {
      pos++;
    } else {
      let start = pos;
      while (pos < buf.length && buf[pos] > 0x20) pos++;
      const tok = buf.toString("ascii", start, pos);
      const v = Number(tok);
      if (!Number.isInteger(v) || v <= 0) throw new Error(`bad pnm header token ${JSON.stringify(tok)}`);
      tokens.push(v);
    }
  }
  pos++; // the single whitespace after maxval
  const [width, height, maxval] = tokens;
  if (maxval > 255) throw new Error(`pnm maxval ${maxval} not supported`);
  const channels = buf[1] === 0x36 ? 3 : 1; // P6 vs P5
  const need = width * height * channels;
  if (buf.length - pos < need) throw new Error("truncated pnm pixel data");
  const n = width * height;
  const out = new Uint8Array(n * 3);
  for (let i = 0; i < n; i++) {
    for (let c = 0; c < 3; c++) {
      out[i * 3 + c] = buf[pos + (channels === 3 ? i * 3 + c : i)];
    }
  }
  return { width, height, data: out };
}

export function decodeImage(buf: Buffer): RgbImage {
  if (buf.length >= 8 && buf[0] === 0x89 && buf[1] === 0x50 && buf[2] === 0x4e && buf[3] === 0x47) {
    const png = PNG.sync.read(buf);
    return fromRgba(png.width, png.height, new Uint8Array(png.data));
  }
  if (buf.length >= 3 && buf[0] === 0xff && buf[1] === 0xd8 && buf[2] === 0xff) {
    const img = jpeg.decode(buf, { useTArray: true, formatAsRGBA: true, maxMemoryUsageInMB: 512 });
    return fromRgba(img.width, img.height, new Uint8Array(img.data));
  }
  if (buf.length >= 2 && buf[0] === 0x50 && (buf[1] === 0x35 || buf[1] === 0x36)) {
    return parsePnm(buf);
  }
  throw new Error("unsupported image format");
}

/** Bilinear resample to dstW x dstH with half-pixel centre alignment. */
export function resizeBilinear(img: RgbImage, dstW: number, dstH: number): RgbImage {
  const { width: sw, height: sh, data } = img;
  const out = new Uint8Array(dstW * dstH * 3);
  const xScale = sw / dstW;
  const yScale = sh / dstH;
  for (let y = 0; y < dstH; y++) {
    let sy = (y + 0.5) * yScale - 0.5;
    sy = Math.min(Math.max(sy, 0), sh - 1);
    const y0 = Math.floor(sy);
    const y1 = Math.min(y0 + 1, sh - 1);
    const fy = sy - y0;
    for (let x = 0; x < dstW; x++) {
      let sx = (x + 0.5) * xScale - 0.5;
      sx = Math.min(Math.max(sx, 0), sw - 1);
      const x0 = Math.floor(sx);
      const x1 = Math.min(x0 + 1, sw - 1);
      const fx = sx - x0;
      for (let c = 0; c < 3; c++) {
        const p00 = data[(y0 * sw + x0) * 3 + c];
        const p01 = data[(y0 * sw + x1) * 3 + c];
        const p10 = data[(y1 * sw + x0) * 3 + c];
        const p11 = data[(y1 * sw + x1) * 3 + c];
        const top = p00 + (p01 - p00) * fx;
        const bot = p10 + (p11 - p10) * fx;
        out[(y * dstW + x) * 3 + c] = Math.round(top + (bot - top) * fy);
      }
    }
  }
  return { width: dstW, height: dstH, data: out };
}
