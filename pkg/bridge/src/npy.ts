/**
 * Minimal NumPy .npy reader for little-endian float32 arrays (format
 * versions 1.0 and 2.0), enough to load target images saved with np.save.
 */

export interface NpyArray {
  data: Float32Array;
  shape: number[];
}

const MAGIC = "\x93NUMPY";

export function parseNpy(buffer: Buffer): NpyArray {
  if (buffer.length < 10 || buffer.toString("latin1", 0, 6) !== MAGIC) {
    throw new Error("not an npy file");
  }
  const major = buffer.readUInt8(6);
  let headerLength: number;
  let headerStart: number;
  if (major === 1) {
    headerLength = buffer.readUInt16LE(8);
    headerStart = 10;
  } else if (major === 2) {
    headerLength = buffer.readUInt32LE(8);
    headerStart = 12;
  } else {
    throw new Error(`unsupported npy version ${major}`);
  }
  const header = buffer.toString("latin1", headerStart, headerStart + headerLength);
  const descr = /'descr':\s*'([^']+)'/.exec(header);
  const fortran = /'fortran_order':\s*(True|False)/.exec(header);
  const shapeMatch = /'shape':\s*\(([^)]*)\)/.exec(header);
  if (!descr || !fortran || !shapeMatch) {
    throw new Error("malformed npy header");
  }
  if (descr[1] !== "<f4") {
    throw new Error(`expected little-endian float32, got ${descr[1]}`);
  }
  if (fortran[1] !== "False") {
    throw new Error("fortran-ordered npy not supported");
  }
  const shape = shapeMatch[1]
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => parseInt(s, 10));
  const count = shape.reduce((a, b) => a * b, 1);
  const dataStart = headerStart + headerLength;
  if (buffer.length < dataStart + count * 4) {
    throw new Error("npy payload truncated");
  }
  const copy = new Uint8Array(buffer.subarray(dataStart, dataStart + count * 4));
  return { data: new Float32Array(copy.buffer), shape };
}
