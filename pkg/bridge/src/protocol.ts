/**
 * Wire protocol types and tensor serialization.
 *
 * Messages are newline-delimited JSON. Tensors travel as base64 of
 * little-endian float32, row-major, with an explicit shape.
 */

export const PROTOCOL_VERSION = 1;

export interface TensorPayload {
  shape: number[];
  dtype: string;
  data: string;
}

export interface HandshakeMessage {
  type: "handshake";
  protocol_version: number;
  schedule: {
    train_steps: number;
    /** Cumulative signal levels indexed by timestep, alpha_bars[0] === 1. */
    alpha_bars: number[];
  };
}

export interface DenoiseEntry {
  view_id: number;
  timestep: number;
  latent: TensorPayload;
  depth: TensorPayload;
  prompt: string;
  guidance_scale: number;
}

export interface DenoiseMessage {
  type: "denoise";
  batch: DenoiseEntry[];
  graph: { related: number[][] };
}

export type ClientMessage = HandshakeMessage | DenoiseMessage;

export interface HandshakeAck {
  type: "handshake_ack";
  protocol_version: number;
  backend: string;
}

export interface EpsilonReply {
  type: "epsilon";
  batch: { view_id: number; epsilon: TensorPayload }[];
}

export interface ErrorReply {
  type: "error";
  message: string;
  view_id?: number;
}

export type ServerMessage = HandshakeAck | EpsilonReply | ErrorReply;

export class ProtocolError extends Error {
  viewId?: number;

  constructor(message: string, viewId?: number) {
    super(message);
    this.name = "ProtocolError";
    this.viewId = viewId;
  }
}

export function tensorElements(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function encodeTensor(data: Float32Array, shape: number[]): TensorPayload {
  if (tensorElements(shape) !== data.length) {
    throw new ProtocolError(`tensor shape ${shape} does not match length ${data.length}`);
  }
  // Float32Array is little-endian on every platform node supports.
  const bytes = Buffer.from(data.buffer, data.byteOffset, data.byteLength);
  return { shape: [...shape], dtype: "float32", data: bytes.toString("base64") };
}

export function decodeTensor(payload: TensorPayload): { data: Float32Array; shape: number[] } {
  if (payload.dtype !== "float32") {
    throw new ProtocolError(`unsupported tensor dtype ${payload.dtype}`);
  }
  const bytes = Buffer.from(payload.data, "base64");
  const expected = tensorElements(payload.shape) * 4;
  if (bytes.length !== expected) {
    throw new ProtocolError(
      `tensor payload ${bytes.length} bytes does not match shape ${payload.shape}`,
    );
  }
  const copy = new Uint8Array(bytes); // realign for the Float32Array view
  return { data: new Float32Array(copy.buffer), shape: [...payload.shape] };
}

export function sameShape(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((v, i) => v === b[i]);
}

/**
 * Exact noise residual toward a target: (x_t - sqrt(ab) x0) / sqrt(1 - ab),
 * evaluated in float32 step by step (Math.fround after each operation) so
 * the result is bit-identical to a float32 array implementation.
 */
export function epsilonToward(
  latent: Float32Array,
  target: Float32Array,
  alphaBar: number,
): Float32Array {
  const ab = Math.fround(Math.sqrt(alphaBar));
  const rb = Math.fround(Math.sqrt(1.0 - alphaBar));
  const out = new Float32Array(latent.length);
  for (let i = 0; i < latent.length; i++) {
    const scaled = Math.fround(ab * target[i]);
    const diff = Math.fround(latent[i] - scaled);
    out[i] = diff / rb; // the store rounds the float32 division
  }
  return out;
}
