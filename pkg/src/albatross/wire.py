"""Newline-delimited JSON framing and record codecs."""

from __future__ import annotations

import json
import os
import socket
from typing import Iterable

from .errors import ProtocolError
from .field import Vector2
from .protocols import CheckinRecord, Header

DEFAULT_ADDRESS = "127.0.0.1:7070"
PIPELINE_WINDOW = 64


def encode(msg: dict) -> bytes:
    return json.dumps(msg, separators=(",", ":")).encode() + b"\n"


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {text!r}")
    return host, int(port)


def server_address(explicit: str | None = None) -> tuple[str, int]:
    return parse_address(explicit or os.environ.get("ALBATROSS_SERVER") or DEFAULT_ADDRESS)


def record_to_wire(rec: CheckinRecord) -> dict:
    return {"ctr": rec.ctr, "eb": [rec.eb_mine, rec.eb_peer], "cell": rec.cell, "vec": rec.vec.to_wire()}


def _as_int(v, what: str) -> int:
    if not isinstance(v, int) or isinstance(v, bool):
        raise ValueError(f"{what} must be an integer")
    return v


def _bits(pair) -> tuple[int, int]:
    if not isinstance(pair, list) or len(pair) != 2 or any(b not in (0, 1) or isinstance(b, bool) for b in pair):
        raise ValueError("eb must be a pair of bits")
    return pair[0], pair[1]


def record_from_wire(body: dict) -> CheckinRecord:
    eb_mine, eb_peer = _bits(body.get("eb"))
    cell = _as_int(body.get("cell"), "cell")
    if not 1 <= cell <= 9:
        raise ValueError("cell label must be in [1, 9]")
    ctr = _as_int(body.get("ctr"), "ctr")
    if not 0 < ctr < 1 << 64:
        raise ValueError("ctr must be a positive 64-bit value")
    return CheckinRecord(ctr, eb_mine, eb_peer, cell, Vector2.from_wire(body.get("vec")))


def header_from_wire(resp: dict) -> Header:
    eb_mine, eb_peer = _bits(resp["eb"])
    return Header(_as_int(resp["ctr"], "ctr"), eb_mine, eb_peer, _as_int(resp["cell"], "cell"))


def check(resp: dict) -> dict:
    if not resp.get("ok"):
        raise ProtocolError(resp.get("err", "UNKNOWN"), resp.get("detail", ""))
    return resp


class Connection:
    """Blocking line-oriented JSON client connection."""

    def __init__(self, address: tuple[str, int], timeout: float = 30.0):
        self.sock = socket.create_connection(address, timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._rfile = self.sock.makefile("rb")

    def _read(self) -> dict:
        line = self._rfile.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return json.loads(line)

    def call(self, msg: dict) -> dict:
        self.sock.sendall(encode(msg))
        return self._read()

    def call_many(self, msgs: Iterable[dict], window: int = PIPELINE_WINDOW) -> list[dict]:
        """Pipeline requests in windows; replies come back in request order."""
        msgs = list(msgs)
        out = []
        for i in range(0, len(msgs), window):
            chunk = msgs[i:i + window]
            self.sock.sendall(b"".join(encode(m) for m in chunk))
            out.extend(self._read() for _ in chunk)
        return out

    def close(self):
        try:
            self._rfile.close()
        finally:
            self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
