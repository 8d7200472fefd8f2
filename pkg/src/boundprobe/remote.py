"""Remote logits adapter: line-delimited JSON over a pipe or a local socket.

Request:  ``{"context": [ids]}``
Response: ``{"logits": [floats]}`` or ``{"error": "message"}``

Any inference process that speaks this protocol can back the decoder.  The
output head itself is loaded locally from an ``EMBD`` file.
"""

from __future__ import annotations

import json
import socket
import subprocess
import sys
import threading
from typing import IO, Sequence

import numpy as np

from .linalg import EmbeddingMatrix


class RemoteLanguageModel:
    def __init__(self, embedding: EmbeddingMatrix, eos_token: int, reader: IO[str], writer: IO[str], closer=None):
        self.embedding = embedding
        self.eos_token = int(eos_token)
        self._reader = reader
        self._writer = writer
        self._closer = closer
        self._lock = threading.Lock()

    @property
    def vocab_size(self) -> int:
        return self.embedding.rows

    def step(self, context: Sequence[int]) -> np.ndarray:
        with self._lock:
            self._writer.write(json.dumps({"context": [int(t) for t in context]}) + "\n")
            self._writer.flush()
            line = self._reader.readline()
        if not line:
            raise ConnectionError("remote model closed the stream")
        msg = json.loads(line)
        if "error" in msg:
            raise RuntimeError(f"remote model error: {msg['error']}")
        logits = np.asarray(msg["logits"], dtype=np.float64)
        if logits.shape != (self.vocab_size,):
            raise ValueError(f"remote returned {logits.shape[0]} logits, expected {self.vocab_size}")
        return logits

    def close(self) -> None:
        if self._closer is not None:
            self._closer()
            self._closer = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @classmethod
    def spawn(cls, command: Sequence[str], embedding: EmbeddingMatrix, eos_token: int) -> "RemoteLanguageModel":
        """Start ``command`` and talk to it over its stdin/stdout."""
        proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )

        def _close():
            proc.stdin.close()
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
            proc.stdout.close()

        return cls(embedding, eos_token, proc.stdout, proc.stdin, _close)

    @classmethod
    def connect(cls, host: str, port: int, embedding: EmbeddingMatrix, eos_token: int) -> "RemoteLanguageModel":
        sock = socket.create_connection((host, port))
        fh = sock.makefile("rw", encoding="utf-8", newline="\n")

        def _close():
            fh.close()
            sock.close()

        return cls(embedding, eos_token, fh, fh, _close)


def serve(model, reader: IO[str] = sys.stdin, writer: IO[str] = sys.stdout) -> None:
    """Answer logits requests for ``model`` until ``reader`` is exhausted."""
    for line in reader:
        if not line.strip():
            continue
        try:
            ctx = json.loads(line)["context"]
            reply = {"logits": [float(v) for v in model.step(ctx)]}
        except Exception as exc:  # noqa: BLE001 - reported to the client
            reply = {"error": repr(exc)}
        writer.write(json.dumps(reply) + "\n")
        writer.flush()


def main(argv: Sequence[str] | None = None) -> None:
    """``python -m boundprobe.remote MODEL_DIR`` serves a mock model over stdio."""
    from .decoder import MockLanguageModel

    args = list(sys.argv[1:] if argv is None else argv)
    if len(args) != 1:
        raise SystemExit("usage: python -m boundprobe.remote MODEL_DIR")
    serve(MockLanguageModel.load(args[0]))


if __name__ == "__main__":
    main()
