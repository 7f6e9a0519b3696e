/*
 * Binary netpbm readers: P6 (RGB) for images and color-coded masks, P5
 * (grayscale) for id-coded masks. Maxval above 255 is out of scope.
 */

import { AdapterError } from './errors';

export interface RasterImage {
  width: number;
  height: number;
  channels: 1 | 3;
  /** Row-major, channel-interleaved bytes. */
  pixels: Uint8Array;
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}

/** Reads the next whitespace-delimited token, skipping '#' comments. */
function nextToken(buffer: Buffer, offset: number): { token: string; next: number } {
  let i = offset;
  for (;;) {
    while (i < buffer.length && isSpace(buffer[i])) i++;
    if (i < buffer.length && buffer[i] === 0x23 /* '#' */) {
      while (i < buffer.length && buffer[i] !== 0x0a) i++;
      continue;
    }
    break;
  }
  const start = i;
  while (i < buffer.length && !isSpace(buffer[i])) i++;
  if (start === i) {
    throw new AdapterError('data', 'unexpected end of netpbm header');
  }
  return { token: buffer.subarray(start, i).toString('latin1'), next: i };
}

export function decodeNetpbm(buffer: Buffer): RasterImage {
  const magic = nextToken(buffer, 0);
  if (magic.token !== 'P5' && magic.token !== 'P6') {
    throw new AdapterError('data', `unsupported netpbm magic ${magic.token}`);
  }
  const channels = magic.token === 'P6' ? 3 : 1;
  const w = nextToken(buffer, magic.next);
  const h = nextToken(buffer, w.next);
  const max = nextToken(buffer, h.next);
  const width = Number(w.token);
  const height = Number(h.token);
  const maxval = Number(max.token);
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new AdapterError('data', `bad netpbm dimensions ${w.token}x${h.token}`);
  }
  if (maxval !== 255) {
    throw new AdapterError('data', `only maxval 255 is supported, got ${max.token}`);
  }
  const start = max.next + 1; // single whitespace after maxval
  const expected = width * height * channels;
  const payload = buffer.subarray(start, start + expected);
  if (payload.length !== expected) {
    throw new AdapterError(
      'data',
      `netpbm payload has ${payload.length} bytes, expected ${expected}`,
    );
  }
  return { width, height, channels: channels as 1 | 3, pixels: new Uint8Array(payload) };
}

export function encodeNetpbm(image: RasterImage): Buffer {
  const magic = image.channels === 3 ? 'P6' : 'P5';
  const header = Buffer.from(`${magic}\n${image.width} ${image.height}\n255\n`, 'latin1');
  return Buffer.concat([header, Buffer.from(image.pixels)]);
}
