import { inflateSync } from "node:zlib";
import { Frame } from "../src/frame";

export function makeFrame(width: number, height: number, seed = 0): Frame {
  const data = new Uint8ClampedArray(width * height * 4);
  // small LCG so frames are deterministic but not uniform
  let state = (seed * 747796405 + 2891336453) >>> 0;
  const next = (): number => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state >>> 24;
  };
  for (let i = 0; i < data.length; i += 4) {
    data[i] = next();
    data[i + 1] = next();
    data[i + 2] = next();
    data[i + 3] = 255;
  }
  return { width, height, data };
}

export interface DecodedPng {
  width: number;
  height: number;
  rgb: Uint8Array; // 3 bytes per pixel, row-major
}

function be32(bytes: Uint8Array, off: number): number {
  return ((bytes[off] << 24) | (bytes[off + 1] << 16) | (bytes[off + 2] << 8) | bytes[off + 3]) >>> 0;
}

// Minimal reader for the exact PNGs the encoder produces: 8-bit RGB,
// filter 0 on every scanline, single IDAT stream.
export function decodePng(bytes: Uint8Array): DecodedPng {
  const idat: Uint8Array[] = [];
  let width = 0;
  let height = 0;
  let off = 8; // skip signature
  while (off < bytes.length) {
    const len = be32(bytes, off);
    const type = String.fromCharCode(...bytes.subarray(off + 4, off + 8));
    const body = bytes.subarray(off + 8, off + 8 + len);
    if (type === "IHDR") {
      width = be32(body, 0);
      height = be32(body, 4);
      if (body[8] !== 8 || body[9] !== 2) throw new Error("expected 8-bit RGB");
    } else if (type === "IDAT") {
      idat.push(body);
    }
    off += 12 + len;
  }
  const raw = inflateSync(Buffer.concat(idat.map((b) => Buffer.from(b))));
  const rgb = new Uint8Array(width * height * 3);
  const stride = 1 + width * 3;
  for (let y = 0; y < height; y++) {
    if (raw[y * stride] !== 0) throw new Error("expected filter 0");
    rgb.set(raw.subarray(y * stride + 1, (y + 1) * stride), y * width * 3);
  }
  return { width, height, rgb };
}

export function base64ToBytes(b64: string): Uint8Array {
  return new Uint8Array(Buffer.from(b64, "base64"));
}
