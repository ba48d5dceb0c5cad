"""In-process loopback server speaking the denoiser wire protocol, with
pluggable behaviors for protocol-error testing."""

import base64
import json
import socket
import threading

import numpy as np


def tensor_payload(arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return {
        "shape": list(arr.shape),
        "dtype": "float32",
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def read_tensor(obj):
    shape = tuple(obj["shape"])
    return np.frombuffer(base64.b64decode(obj["data"]), dtype="<f4").reshape(shape)


class WireServer:
    """One-connection-at-a-time TCP server.

    behavior(message, state) -> reply dict; state carries the handshake
    schedule between calls. The default behavior acks the handshake and
    answers every view with zero epsilon.
    """

    def __init__(self, behavior=None, ack_version=1):
        self.behavior = behavior or self.default_behavior
        self.ack_version = ack_version
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(("127.0.0.1", 0))
        self._sock.listen(4)
        self.port = self._sock.getsockname()[1]
        self.endpoint = f"127.0.0.1:{self.port}"
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._stop = False
        self._thread.start()

    def default_behavior(self, message, state):
        if message["type"] == "handshake":
            state["schedule"] = message["schedule"]
            return {
                "type": "handshake_ack",
                "protocol_version": self.ack_version,
                "backend": "zero",
            }
        batch = [
            {
                "view_id": entry["view_id"],
                "epsilon": tensor_payload(np.zeros(tuple(entry["latent"]["shape"]))),
            }
            for entry in message["batch"]
        ]
        return {"type": "epsilon", "batch": batch}

    def _serve(self):
        while not self._stop:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            with conn:
                fh = conn.makefile("rwb")
                state = {}
                for line in fh:
                    try:
                        message = json.loads(line)
                        reply = self.behavior(message, state)
                    except Exception as exc:  # behavior bugs become errors
                        reply = {"type": "error", "message": str(exc)}
                    if reply is None:
                        break
                    fh.write(json.dumps(reply).encode() + b"\n")
                    fh.flush()

    def close(self):
        self._stop = True
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
