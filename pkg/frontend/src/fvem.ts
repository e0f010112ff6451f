/**
 * FVEM binary embedding matrices, bit-exact with the engine's format:
 * magic "FVEM", u16 LE version = 1, u16 reserved = 0, u32 LE rows,
 * u32 LE cols, then rows*cols float32 LE row-major.
 */

const MAGIC = Buffer.from("FVEM", "ascii");
const HEADER_BYTES = 16;
export const FVEM_VERSION = 1;

export interface Matrix {
  rows: number;
  cols: number;
  /** row-major, length rows*cols */
  data: Float32Array;
}

export function encodeFvem(matrix: Matrix): Buffer {
  const { rows, cols, data } = matrix;
  if (rows <= 0 || cols <= 0) {
    throw new Error(`refusing to encode degenerate matrix ${rows}x${cols}`);
  }
  if (data.length !== rows * cols) {
    throw new Error(`data length ${data.length} != ${rows}*${cols}`);
  }
  for (const v of data) {
    if (!Number.isFinite(v)) throw new Error("matrix contains non-finite values");
  }
  const buf = Buffer.alloc(HEADER_BYTES + 4 * rows * cols);
  MAGIC.copy(buf, 0);
  buf.writeUInt16LE(FVEM_VERSION, 4);
  buf.writeUInt16LE(0, 6);
  buf.writeUInt32LE(rows, 8);
  buf.writeUInt32LE(cols, 12);
  for (let i = 0; i < data.length; i++) {
    buf.writeFloatLE(data[i], HEADER_BYTES + 4 * i);
  }
  return buf;
}

export function decodeFvem(buf: Buffer): Matrix {
  if (buf.length < HEADER_BYTES) throw new Error("buffer shorter than FVEM header");
  if (!buf.subarray(0, 4).equals(MAGIC)) throw new Error("bad FVEM magic");
  if (buf.readUInt16LE(4) !== FVEM_VERSION) throw new Error("unsupported FVEM version");
  if (buf.readUInt16LE(6) !== 0) throw new Error("nonzero reserved header field");
  const rows = buf.readUInt32LE(8);
  const cols = buf.readUInt32LE(12);
  if (rows === 0 || cols === 0) throw new Error(`degenerate FVEM shape ${rows}x${cols}`);
  const expected = HEADER_BYTES + 4 * rows * cols;
  if (buf.length < expected) throw new Error("truncated FVEM payload");
  if (buf.length > expected) throw new Error("trailing bytes after FVEM payload");
  const data = new Float32Array(rows * cols);
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readFloatLE(HEADER_BYTES + 4 * i);
    if (!Number.isFinite(data[i])) throw new Error("FVEM payload contains non-finite values");
  }
  return { rows, cols, data };
}
