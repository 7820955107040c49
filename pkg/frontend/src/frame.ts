// Raw RGBA frames and the overlay crop geometry.
//
// The capture overlay is a circle whose diameter is 70% of the preview's
// shorter side; the uploaded region is that circle's bounding square,
// scaled to the canonical processing size the server expects.

export const OVERLAY_RATIO = 0.7;
export const CANONICAL_WIDTH = 270;
export const CANONICAL_HEIGHT = 312;

export interface Frame {
  width: number;
  height: number;
  data: Uint8ClampedArray; // RGBA, row-major, 4 bytes per pixel
}

export interface OverlayRect {
  x: number;
  y: number;
  side: number;
}

export function overlayRect(width: number, height: number): OverlayRect {
  const side = Math.round(OVERLAY_RATIO * Math.min(width, height));
  return {
    x: Math.floor((width - side) / 2),
    y: Math.floor((height - side) / 2),
    side,
  };
}

export function cropRect(frame: Frame, rect: OverlayRect): Frame {
  const out = new Uint8ClampedArray(rect.side * rect.side * 4);
  for (let row = 0; row < rect.side; row++) {
    const srcStart = ((rect.y + row) * frame.width + rect.x) * 4;
    out.set(frame.data.subarray(srcStart, srcStart + rect.side * 4), row * rect.side * 4);
  }
  return { width: rect.side, height: rect.side, data: out };
}

// Nearest-neighbor scale: deterministic in every runtime, so the preview
// and the uploaded frame are the same bytes by construction.
export function scaleTo(frame: Frame, width: number, height: number): Frame {
  const out = new Uint8ClampedArray(width * height * 4);
  for (let y = 0; y < height; y++) {
    const sy = Math.min(Math.floor(((y + 0.5) * frame.height) / height), frame.height - 1);
    for (let x = 0; x < width; x++) {
      const sx = Math.min(Math.floor(((x + 0.5) * frame.width) / width), frame.width - 1);
      const src = (sy * frame.width + sx) * 4;
      const dst = (y * width + x) * 4;
      out[dst] = frame.data[src];
      out[dst + 1] = frame.data[src + 1];
      out[dst + 2] = frame.data[src + 2];
      out[dst + 3] = frame.data[src + 3];
    }
  }
  return { width, height, data: out };
}

export function processCapture(raw: Frame): Frame {
  const cropped = cropRect(raw, overlayRect(raw.width, raw.height));
  return scaleTo(cropped, CANONICAL_WIDTH, CANONICAL_HEIGHT);
}

export function framesEqual(a: Frame, b: Frame): boolean {
  if (a.width !== b.width || a.height !== b.height) return false;
  for (let i = 0; i < a.data.length; i++) {
    if (a.data[i] !== b.data[i]) return false;
  }
  return true;
}
