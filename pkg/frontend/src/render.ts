/** Frame decoding and pixel helpers.
 *
 * Bridge frames carry zlib-compressed row-major uint8 grayscale
 * pixels, base64-encoded. Decoding uses only web-standard globals
 * (atob, Blob, DecompressionStream, Response) that node 20 also
 * provides, so everything here is testable without a browser.
 */

import { FramePayload, ProtocolError } from "./protocol.js";

export function base64ToBytes(b64: string): Uint8Array {
  let binary: string;
  try {
    binary = atob(b64);
  } catch {
    throw new ProtocolError("frame data is not valid base64");
  }
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) {
    out[i] = binary.charCodeAt(i) & 0xff;
  }
  return out;
}

/** Decompress a frame payload to its raw grayscale pixels
 * (width * height bytes, row-major). */
export async function decodeFrameData(payload: FramePayload): Promise<Uint8Array> {
  const compressed = base64ToBytes(payload.data);
  // "deflate" in the Compression Streams API is the zlib wrapper
  // (RFC 1950), which is what the bridge produces.
  const stream = new Blob([compressed as BlobPart])
    .stream()
    .pipeThrough(new DecompressionStream("deflate"));
  let pixels: Uint8Array;
  try {
    pixels = new Uint8Array(await new Response(stream).arrayBuffer());
  } catch {
    throw new ProtocolError("frame data failed to decompress");
  }
  if (pixels.length !== payload.width * payload.height) {
    throw new ProtocolError(
      `frame size mismatch: ${pixels.length} bytes for ${payload.width}x${payload.height}`,
    );
  }
  return pixels;
}

/** Expand grayscale to RGBA for canvas ImageData (alpha 255). */
export function grayscaleToRgba(
  gray: Uint8Array,
  width: number,
  height: number,
): Uint8ClampedArray<ArrayBuffer> {
  if (gray.length !== width * height) {
    throw new ProtocolError("pixel buffer does not match dimensions");
  }
  const rgba = new Uint8ClampedArray(4 * gray.length);
  for (let i = 0; i < gray.length; i++) {
    const v = gray[i] as number;
    const j = 4 * i;
    rgba[j] = v;
    rgba[j + 1] = v;
    rgba[j + 2] = v;
    rgba[j + 3] = 255;
  }
  return rgba;
}

/** Paint a center crosshair into an RGBA buffer in place (the aiming
 * reference over the fingertip-camera view). */
export function drawCrosshairRgba(
  rgba: Uint8ClampedArray,
  width: number,
  height: number,
  color: [number, number, number] = [255, 64, 64],
  halfLength = 12,
): void {
  if (rgba.length !== 4 * width * height) {
    throw new ProtocolError("pixel buffer does not match dimensions");
  }
  const cx = Math.floor(width / 2);
  const cy = Math.floor(height / 2);
  const put = (x: number, y: number): void => {
    if (x < 0 || x >= width || y < 0 || y >= height) return;
    const j = 4 * (y * width + x);
    rgba[j] = color[0];
    rgba[j + 1] = color[1];
    rgba[j + 2] = color[2];
    rgba[j + 3] = 255;
  };
  for (let d = -halfLength; d <= halfLength; d++) {
    put(cx + d, cy);
    put(cx, cy + d);
  }
}
