/**
 * TCP server speaking the denoiser wire protocol (newline-delimited JSON).
 *
 * Each connection handshakes first (receiving the engine's schedule
 * constants) and then answers one denoise batch at a time. Multiple
 * connections are independent.
 */

import { createServer, Server, Socket } from "node:net";

import { AdapterBackend } from "./adapter.js";
import {
  ClientMessage,
  PROTOCOL_VERSION,
  ProtocolError,
  ServerMessage,
} from "./protocol.js";
import { Schedule, TargetBackend } from "./target.js";

export type Backend = TargetBackend | AdapterBackend;

export interface ConnectionState {
  schedule?: Schedule;
}

export async function handleMessage(
  message: ClientMessage,
  state: ConnectionState,
  backend: Backend,
): Promise<ServerMessage> {
  if (message.type === "handshake") {
    if (message.protocol_version !== PROTOCOL_VERSION) {
      return {
        type: "error",
        message:
          `protocol version mismatch: server ${PROTOCOL_VERSION}, ` +
          `client ${message.protocol_version}`,
      };
    }
    const schedule = message.schedule;
    if (!schedule || !Array.isArray(schedule.alpha_bars)) {
      return { type: "error", message: "handshake missing schedule.alpha_bars" };
    }
    state.schedule = { trainSteps: schedule.train_steps, alphaBars: schedule.alpha_bars };
    return { type: "handshake_ack", protocol_version: PROTOCOL_VERSION, backend: backend.name };
  }
  if (message.type === "denoise") {
    if (!state.schedule) {
      return { type: "error", message: "denoise before handshake" };
    }
    try {
      return await backend.denoise(message, state.schedule);
    } catch (err) {
      if (err instanceof ProtocolError) {
        const reply: ServerMessage = { type: "error", message: err.message };
        if (err.viewId !== undefined) reply.view_id = err.viewId;
        return reply;
      }
      return { type: "error", message: `backend failure: ${(err as Error).message}` };
    }
  }
  return { type: "error", message: `unknown message type ${(message as { type?: string }).type}` };
}

function attach(socket: Socket, backend: Backend): void {
  const state: ConnectionState = {};
  let buffer = "";
  let chain = Promise.resolve();
  socket.on("data", (chunk) => {
    buffer += chunk.toString("utf-8");
    let newline = buffer.indexOf("\n");
    while (newline >= 0) {
      const line = buffer.slice(0, newline);
      buffer = buffer.slice(newline + 1);
      newline = buffer.indexOf("\n");
      if (!line.trim()) continue;
      // serialize replies: one in-flight batch per connection
      chain = chain.then(async () => {
        let reply: ServerMessage;
        try {
          reply = await handleMessage(JSON.parse(line) as ClientMessage, state, backend);
        } catch (err) {
          reply = { type: "error", message: `malformed message: ${(err as Error).message}` };
        }
        if (!socket.destroyed) {
          socket.write(JSON.stringify(reply) + "\n");
        }
      });
    }
  });
  socket.on("error", () => socket.destroy());
}

export function startServer(backend: Backend, port: number, host = "127.0.0.1"): Promise<Server> {
  const server = createServer((socket) => attach(socket, backend));
  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(port, host, () => resolve(server));
  });
}
