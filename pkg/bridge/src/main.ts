/**
 * Bridge server entry point.
 *
 *   node dist/main.js --port 7432 --backend target --targets ./targets
 *   node dist/main.js --port 7432 --backend model-adapter --adapter ./my_model.mjs
 *
 * Prints "listening on HOST:PORT" once ready.
 */

import { parseArgs } from "node:util";
import { AddressInfo } from "node:net";

import { AdapterBackend } from "./adapter.js";
import { Backend, startServer } from "./server.js";
import { TargetBackend } from "./target.js";

async function main(): Promise<void> {
  const { values } = parseArgs({
    options: {
      port: { type: "string", default: "7432" },
      host: { type: "string", default: "127.0.0.1" },
      backend: { type: "string", default: "target" },
      targets: { type: "string" },
      adapter: { type: "string" },
    },
  });
  let backend: Backend;
  if (values.backend === "target") {
    if (!values.targets) {
      throw new Error("--backend target requires --targets <directory>");
    }
    backend = new TargetBackend(values.targets);
  } else if (values.backend === "model-adapter") {
    if (!values.adapter) {
      throw new Error("--backend model-adapter requires --adapter <module.mjs>");
    }
    backend = await AdapterBackend.load(values.adapter);
  } else {
    throw new Error(`unknown backend ${values.backend} (target | model-adapter)`);
  }
  const server = await startServer(backend, parseInt(values.port as string, 10), values.host);
  const address = server.address() as AddressInfo;
  console.log(`listening on ${address.address}:${address.port}`);
}

main().catch((err) => {
  console.error(err instanceof Error ? err.message : err);
  process.exit(1);
});
