"""Length-prefixed stdio frames for talking to external model processes.

Frame layout: u32 LE header length | JSON header | raw payload. The payload
length is not part of the envelope; it is implied by the header:

  {"op":"hello","version":1}                    -> no payload
  {"op":"hello","version":1,"n_class":n,"batch":b} -> no payload (reply)
  {"op":"predict","c":C,"h":H,"w":W}            -> C*H*W f32 LE
  {"op":"logits","n_class":n,"h":H,"w":W}       -> n*H*W f32 LE
  {"op":"error","message":str}                  -> no payload
  {"op":"bye"}                                  -> no payload
"""

from __future__ import annotations

import json
import os
import select
import struct
import time

from .errors import BackendTimeout, ProtocolViolation

PROTOCOL_VERSION = 1


def encode_frame(header: dict, payload: bytes = b"") -> bytes:
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(head)) + head + payload


def payload_size(header: dict) -> int:
    """Payload byte count implied by a parsed frame header."""
    op = header.get("op")
    if op == "predict":
        return 4 * int(header["c"]) * int(header["h"]) * int(header["w"])
    if op == "logits":
        return 4 * int(header["n_class"]) * int(header["h"]) * int(header["w"])
    return 0


class FrameReader:
    """Reads frames from a file descriptor with an optional deadline."""

    def __init__(self, fd: int, timeout: float | None = None):
        self.fd = fd
        self.timeout = timeout

    def _read_exact(self, n: int, deadline, what: str) -> bytes:
        chunks = []
        got = 0
        while got < n:
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise BackendTimeout(self.timeout)
                ready, _, _ = select.select([self.fd], [], [], remaining)
                if not ready:
                    raise BackendTimeout(self.timeout)
            chunk = os.read(self.fd, n - got)
            if not chunk:
                raise ProtocolViolation(what, f"EOF after {got} of {n} bytes")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def read_frame(self) -> tuple[dict, bytes]:
        deadline = None if self.timeout is None else time.monotonic() + self.timeout
        raw_len = self._read_exact(4, deadline, "frame length prefix")
        head_len = struct.unpack("<I", raw_len)[0]
        if head_len == 0 or head_len > 1 << 20:
            raise ProtocolViolation("header length in (0, 1MiB]", str(head_len))
        raw_head = self._read_exact(head_len, deadline, "frame header")
        try:
            header = json.loads(raw_head.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolViolation("JSON header", f"undecodable header ({exc})")
        if not isinstance(header, dict) or "op" not in header:
            raise ProtocolViolation("header object with op", repr(header)[:80])
        body = self._read_exact(payload_size(header), deadline, "frame payload")
        return header, body
