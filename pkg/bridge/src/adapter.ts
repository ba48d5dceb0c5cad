/**
 * Adapter seam for mounting a real depth-conditioned diffusion model.
 *
 * An adapter module default-exports an async function receiving the decoded
 * batch (latents and depths as Float32Arrays with shapes, plus prompt and
 * guidance scale per view, the related-view graph, and the handshake
 * schedule) and returning one epsilon Float32Array per view, in order:
 *
 *   export default async function denoise(batch, graph, schedule) {
 *     return batch.map((view) => new Float32Array(view.latent.length));
 *   }
 */

import { pathToFileURL } from "node:url";

import { Schedule } from "./target.js";
import {
  DenoiseMessage,
  EpsilonReply,
  ProtocolError,
  decodeTensor,
  encodeTensor,
} from "./protocol.js";

export interface AdapterView {
  viewId: number;
  timestep: number;
  latent: Float32Array;
  shape: number[];
  depth: Float32Array;
  depthShape: number[];
  prompt: string;
  guidanceScale: number;
}

export type AdapterFn = (
  batch: AdapterView[],
  graph: number[][],
  schedule: Schedule,
) => Promise<Float32Array[]> | Float32Array[];

export class AdapterBackend {
  readonly name = "model-adapter";

  constructor(private fn: AdapterFn) {}

  static async load(modulePath: string): Promise<AdapterBackend> {
    const mod = await import(pathToFileURL(modulePath).href);
    if (typeof mod.default !== "function") {
      throw new Error(`adapter ${modulePath} has no default export function`);
    }
    return new AdapterBackend(mod.default as AdapterFn);
  }

  async denoise(message: DenoiseMessage, schedule: Schedule): Promise<EpsilonReply> {
    const views: AdapterView[] = message.batch.map((entry) => {
      const latent = decodeTensor(entry.latent);
      const depth = decodeTensor(entry.depth);
      return {
        viewId: entry.view_id,
        timestep: entry.timestep,
        latent: latent.data,
        shape: latent.shape,
        depth: depth.data,
        depthShape: depth.shape,
        prompt: entry.prompt,
        guidanceScale: entry.guidance_scale,
      };
    });
    const epsilons = await this.fn(views, message.graph.related, schedule);
    if (epsilons.length !== views.length) {
      throw new ProtocolError(
        `adapter returned ${epsilons.length} outputs for ${views.length} views`,
      );
    }
    return {
      type: "epsilon",
      batch: views.map((view, i) => {
        if (epsilons[i].length !== view.latent.length) {
          throw new ProtocolError(
            `adapter epsilon length ${epsilons[i].length} != latent ${view.latent.length}`,
            view.viewId,
          );
        }
        return { view_id: view.viewId, epsilon: encodeTensor(epsilons[i], view.shape) };
      }),
    };
  }
}
