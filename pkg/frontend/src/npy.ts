/*
 * Minimal writer/reader for the simple binary array container (version 1.0):
 * magic, header dict with dtype/fortran_order/shape, raw little-endian
 * C-order payload. Byte-compatible with every mainstream ML stack, which is
 * the whole point of the adapter.
 */

import { AdapterError } from './errors';

const MAGIC = Buffer.from('\x93NUMPY', 'latin1');

export type Descr = '<f4' | '<f8' | '<i4' | '<i8' | '|u1' | '<u2' | '<i2';

export interface NpyArray {
  descr: Descr;
  shape: number[];
  /** Raw little-endian C-order payload. */
  data: Buffer;
}

const ITEM_SIZE: Record<Descr, number> = {
  '<f4': 4,
  '<f8': 8,
  '<i4': 4,
  '<i8': 8,
  '|u1': 1,
  '<u2': 2,
  '<i2': 2,
};

function shapeRepr(shape: number[]): string {
  if (shape.length === 0) return '()';
  if (shape.length === 1) return `(${shape[0]},)`;
  return `(${shape.join(', ')})`;
}

export function encodeNpy(array: NpyArray): Buffer {
  const expected = shape_elems(array.shape) * ITEM_SIZE[array.descr];
  if (array.data.length !== expected) {
    throw new AdapterError(
      'data',
      `payload has ${array.data.length} bytes, expected ${expected}`,
    );
  }
  let header = `{'descr': '${array.descr}', 'fortran_order': False, 'shape': ${shapeRepr(array.shape)}, }`;
  const unpadded = MAGIC.length + 2 + 2 + header.length + 1;
  header = header + ' '.repeat((64 - (unpadded % 64)) % 64) + '\n';
  const head = Buffer.alloc(MAGIC.length + 4 + header.length);
  MAGIC.copy(head, 0);
  head[6] = 1;
  head[7] = 0;
  head.writeUInt16LE(header.length, 8);
  head.write(header, 10, 'latin1');
  return Buffer.concat([head, array.data]);
}

function shape_elems(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function decodeNpy(buffer: Buffer): NpyArray {
  if (buffer.length < 10 || !buffer.subarray(0, 6).equals(MAGIC)) {
    throw new AdapterError('data', 'not an array file (bad magic)');
  }
  if (buffer[6] !== 1 || buffer[7] !== 0) {
    throw new AdapterError('data', `unsupported container version ${buffer[6]}.${buffer[7]}`);
  }
  const headerLen = buffer.readUInt16LE(8);
  const headerEnd = 10 + headerLen;
  if (buffer.length < headerEnd) {
    throw new AdapterError('data', 'truncated header');
  }
  const header = buffer.subarray(10, headerEnd).toString('latin1');
  const descrMatch = header.match(/'descr':\s*'([^']+)'/);
  const fortranMatch = header.match(/'fortran_order':\s*(True|False)/);
  const shapeMatch = header.match(/'shape':\s*\(([^)]*)\)/);
  if (!descrMatch || !fortranMatch || !shapeMatch) {
    throw new AdapterError('data', 'malformed header dict');
  }
  if (fortranMatch[1] !== 'False') {
    throw new AdapterError('data', 'fortran-order payloads are not supported');
  }
  const descr = descrMatch[1] as Descr;
  if (!(descr in ITEM_SIZE)) {
    throw new AdapterError('data', `unsupported dtype ${descrMatch[1]}`);
  }
  const shape = shapeMatch[1]
    .split(',')
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => {
      const n = Number(s);
      if (!Number.isInteger(n) || n < 0) {
        throw new AdapterError('data', `malformed shape entry ${s}`);
      }
      return n;
    });
  const payload = buffer.subarray(headerEnd);
  const expected = shape_elems(shape) * ITEM_SIZE[descr];
  if (payload.length !== expected) {
    throw new AdapterError(
      'data',
      `payload has ${payload.length} bytes, expected ${expected}`,
    );
  }
  return { descr, shape, data: Buffer.from(payload) };
}

export function float32Array(shape: number[], values: Float32Array): NpyArray {
  const data = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) data.writeFloatLE(values[i], i * 4);
  return { descr: '<f4', shape, data };
}

export function uint8Array(shape: number[], values: Uint8Array): NpyArray {
  return { descr: '|u1', shape, data: Buffer.from(values) };
}
