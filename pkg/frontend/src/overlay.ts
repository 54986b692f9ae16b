/**
 * Mask overlay compositing for display.
 *
 * The console never edits pixels — every image on screen is a server
 * artifact. The overlay tints the result with the blend mask at a chosen
 * opacity so the user can see where the edit landed; at opacity 0 the result
 * bytes pass through untouched.
 */

/** A decoded RGBA raster; mirrors ImageData without requiring the DOM. */
export interface Raster {
  readonly width: number;
  readonly height: number;
  /** RGBA, row-major, 4 bytes per pixel. */
  readonly data: Uint8ClampedArray;
}

/** Tint drawn over masked pixels. */
export const MASK_TINT: readonly [number, number, number] = [255, 80, 40];

/**
 * Composite `mask` (grayscale PNG decoded to RGBA; its R channel is the mask
 * value) over `result`. Per pixel the tint's alpha is mask/255 * opacity.
 * Returns a new raster; the inputs are never written to.
 */
export function overlayMask(
  result: Raster,
  mask: Raster,
  opacity: number,
  tint: readonly [number, number, number] = MASK_TINT,
): Raster {
  if (mask.width !== result.width || mask.height !== result.height) {
    throw new Error(
      `mask is ${mask.width}x${mask.height}, result is ${result.width}x${result.height}`,
    );
  }
  if (!(opacity >= 0 && opacity <= 1)) {
    throw new Error(`opacity must be within [0, 1], got ${opacity}`);
  }
  const out = new Uint8ClampedArray(result.data);
  if (opacity === 0) {
    return { width: result.width, height: result.height, data: out };
  }
  const n = result.width * result.height;
  for (let i = 0; i < n; i++) {
    const a = ((mask.data[i * 4] ?? 0) / 255) * opacity;
    if (a === 0) {
      continue;
    }
    for (let c = 0; c < 3; c++) {
      const base = result.data[i * 4 + c] ?? 0;
      out[i * 4 + c] = Math.round(base * (1 - a) + (tint[c] ?? 0) * a);
    }
  }
  return { width: result.width, height: result.height, data: out };
}
