/**
 * Target backend: answers every request with the exact noise residual
 * toward a per-view target latent loaded from `view_<id>.npy` in the target
 * directory. Stateless between batches; responses depend only on the
 * request and the handshake schedule.
 */

import { readFileSync } from "node:fs";
import { join } from "node:path";

import { parseNpy } from "./npy.js";
import {
  DenoiseMessage,
  EpsilonReply,
  ProtocolError,
  decodeTensor,
  encodeTensor,
  epsilonToward,
  sameShape,
} from "./protocol.js";

export interface Schedule {
  trainSteps: number;
  alphaBars: number[];
}

export class TargetBackend {
  readonly name = "target";
  private cache = new Map<number, { data: Float32Array; shape: number[] }>();

  constructor(private targetDir: string) {}

  private target(viewId: number) {
    const cached = this.cache.get(viewId);
    if (cached) return cached;
    const path = join(this.targetDir, `view_${viewId}.npy`);
    let buffer: Buffer;
    try {
      buffer = readFileSync(path);
    } catch {
      throw new ProtocolError(`unknown view id ${viewId} (no ${path})`, viewId);
    }
    const parsed = parseNpy(buffer);
    this.cache.set(viewId, parsed);
    return parsed;
  }

  denoise(message: DenoiseMessage, schedule: Schedule): EpsilonReply {
    const batch = message.batch.map((entry) => {
      const latent = decodeTensor(entry.latent);
      const target = this.target(entry.view_id);
      if (!sameShape(latent.shape, target.shape)) {
        throw new ProtocolError(
          `view ${entry.view_id}: latent shape ${latent.shape} does not match ` +
            `target shape ${target.shape}`,
          entry.view_id,
        );
      }
      const t = entry.timestep;
      if (!Number.isInteger(t) || t < 0 || t >= schedule.alphaBars.length) {
        throw new ProtocolError(`view ${entry.view_id}: timestep ${t} out of range`, entry.view_id);
      }
      const epsilon = epsilonToward(latent.data, target.data, schedule.alphaBars[t]);
      return { view_id: entry.view_id, epsilon: encodeTensor(epsilon, latent.shape) };
    });
    return { type: "epsilon", batch };
  }
}
