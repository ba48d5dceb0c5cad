"""Wire-protocol client for external denoiser servers.

Transport: newline-delimited JSON over a TCP socket, one object per line.
Tensors travel as base64 of little-endian float32, row-major, with an
explicit shape. The handshake ships the engine's schedule constants so both
sides use identical cumulative noise levels.

    -> {"type": "handshake", "protocol_version": 1,
        "schedule": {"train_steps": 1000, "alpha_bars": [...]}}
    <- {"type": "handshake_ack", "protocol_version": 1, "backend": "target"}
    -> {"type": "denoise", "batch": [{"view_id", "timestep", "latent",
        "depth", "prompt", "guidance_scale"}], "graph": {"related": [...]}}
    <- {"type": "epsilon", "batch": [{"view_id", "epsilon"}]}
    <- {"type": "error", "message": "...", "view_id": optional}

One batch is in flight at a time; any malformed or incomplete response is a
protocol error carrying the offending view id where known.
"""

from __future__ import annotations

import base64
import json
import socket

import numpy as np

from .denoise import ViewGraph
from .errors import ProtocolError
from .schedule import NoiseSchedule

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_SECONDS = 30.0


def encode_tensor(array: np.ndarray) -> dict:
    array = np.ascontiguousarray(array, dtype="<f4")
    return {
        "shape": list(array.shape),
        "dtype": "float32",
        "data": base64.b64encode(array.tobytes()).decode("ascii"),
    }


def decode_tensor(obj, expect_shape=None) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        raw = base64.b64decode(obj["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed tensor: {exc}") from exc
    if obj.get("dtype", "float32") != "float32":
        raise ProtocolError(f"unsupported tensor dtype {obj.get('dtype')!r}")
    expected_bytes = 4 * int(np.prod(shape)) if shape else 4
    if len(raw) != expected_bytes:
        raise ProtocolError(
            f"tensor payload {len(raw)} bytes does not match shape {shape}"
        )
    arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
    if expect_shape is not None and tuple(shape) != tuple(expect_shape):
        raise ProtocolError(f"tensor shape {shape} != expected {tuple(expect_shape)}")
    return arr.astype(np.float32)


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    if endpoint.startswith("tcp://"):
        endpoint = endpoint[len("tcp://"):]
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ProtocolError(f"endpoint must be host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


class RemoteDenoiser:
    """Denoiser contract implemented over the wire protocol.

    Connects and handshakes eagerly so an unreachable or incompatible server
    fails before any sampling starts.
    """

    def __init__(self, endpoint: str, schedule: NoiseSchedule,
                 timeout: float = DEFAULT_TIMEOUT_SECONDS):
        host, port = parse_endpoint(endpoint)
        self.endpoint = endpoint
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ProtocolError(f"cannot connect to denoiser at {endpoint}: {exc}") from exc
        self._sock.settimeout(timeout)
        self._file = self._sock.makefile("rwb")
        ack = self._roundtrip(
            {
                "type": "handshake",
                "protocol_version": PROTOCOL_VERSION,
                "schedule": {
                    "train_steps": schedule.train_steps,
                    "alpha_bars": schedule.alpha_bars.tolist(),
                },
            }
        )
        if ack.get("type") != "handshake_ack":
            raise ProtocolError(f"unexpected handshake reply: {ack.get('type')!r}")
        if ack.get("protocol_version") != PROTOCOL_VERSION:
            raise ProtocolError(
                f"protocol version mismatch: engine {PROTOCOL_VERSION}, "
                f"server {ack.get('protocol_version')}"
            )
        self.backend_name = ack.get("backend", "unknown")

    def _roundtrip(self, message: dict) -> dict:
        try:
            self._file.write(json.dumps(message).encode("utf-8") + b"\n")
            self._file.flush()
            line = self._file.readline()
        except OSError as exc:
            raise ProtocolError(f"denoiser connection failed: {exc}") from exc
        if not line:
            raise ProtocolError("denoiser closed the connection")
        try:
            reply = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"malformed reply: {exc}") from exc
        if reply.get("type") == "error":
            view = reply.get("view_id")
            suffix = f" (view {view})" if view is not None else ""
            raise ProtocolError(f"server error: {reply.get('message')}{suffix}")
        return reply

    def denoise_batch(self, requests, graph: ViewGraph):
        message = {
            "type": "denoise",
            "batch": [
                {
                    "view_id": req.view_id,
                    "timestep": int(req.timestep),
                    "latent": encode_tensor(req.latent),
                    "depth": encode_tensor(req.depth),
                    "prompt": req.prompt,
                    "guidance_scale": float(req.guidance_scale),
                }
                for req in requests
            ],
            "graph": {"related": [list(ids) for ids in graph.related]},
        }
        reply = self._roundtrip(message)
        if reply.get("type") != "epsilon":
            raise ProtocolError(f"unexpected reply type {reply.get('type')!r}")
        batch = reply.get("batch")
        if not isinstance(batch, list):
            raise ProtocolError("epsilon reply missing batch")
        by_view = {}
        for entry in batch:
            by_view[entry.get("view_id")] = entry
        out = []
        for req in requests:
            entry = by_view.get(req.view_id)
            if entry is None:
                raise ProtocolError(f"response missing view {req.view_id}")
            out.append(decode_tensor(entry.get("epsilon"), expect_shape=req.latent.shape))
        extras = set(by_view) - {req.view_id for req in requests}
        if extras:
            raise ProtocolError(f"response contains unknown views {sorted(extras)}")
        return out

    def close(self):
        try:
            self._file.close()
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
