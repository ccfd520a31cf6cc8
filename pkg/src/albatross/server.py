"""Honest-but-curious relay server.

The relay stores opaque checkin records per contact direction, evaluates one
inner product per retrieval, and replays pre-generated invisible records for
users who have gone offline.  It never sees a location or a granularity.

Every request and its reply are appended to a transcript, which is exactly
what a curious operator could log.
"""

from __future__ import annotations

import argparse
import hashlib
import hmac
import json
import logging
import os
import re
import secrets
import socket
import socketserver
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import ProtocolError
from .field import Vector2, inner_product, to_hex
from .protocols import CheckinRecord
from .wire import encode, parse_address, record_from_wire, record_to_wire

log = logging.getLogger(__name__)

ERR_DUP_USER = "DUP_USER"
ERR_NO_EDGE = "NO_EDGE"
ERR_BAD_CTR = "BAD_CTR"
ERR_UNKNOWN_CTR = "UNKNOWN_CTR"
ERR_CONSUMED = "CONSUMED"
ERR_AUTH = "AUTH"
ERR_NO_USER = "NO_USER"
ERR_BAD_PEER = "BAD_PEER"
ERR_BAD_REQ = "BAD_REQ"

_USER_RE = re.compile(r"^[A-Za-z0-9_.-]{1,64}$")
_PUB_RE = re.compile(r"^[0-9a-f]{64}$")


@dataclass
class ServerConfig:
    listen: str = "127.0.0.1:7070"
    t_offline: float = 30.0
    snapshot: Optional[str] = None
    transcript: Optional[str] = None
    kdf_iterations: int = 50_000


_ENV_KEYS = {
    "listen": "ALBATROSS_LISTEN",
    "t_offline": "ALBATROSS_T_OFFLINE",
    "snapshot": "ALBATROSS_SNAPSHOT",
    "transcript": "ALBATROSS_TRANSCRIPT",
    "kdf_iterations": "ALBATROSS_KDF_ITERATIONS",
}


def _coerce(key: str, value: str):
    if key == "t_offline":
        return float(value)
    if key == "kdf_iterations":
        return int(value)
    return value


def load_config(path: Optional[str] = None, environ=None) -> ServerConfig:
    """Defaults, then ``key=value`` file, then environment overrides."""
    environ = os.environ if environ is None else environ
    values = {}
    if path:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                key = key.strip()
                if not sep or key not in _ENV_KEYS:
                    raise ValueError(f"{path}:{lineno}: bad config line {line!r}")
                values[key] = _coerce(key, value.strip())
    for key, env in _ENV_KEYS.items():
        if env in environ:
            values[key] = _coerce(key, environ[env])
    return ServerConfig(**values)


@dataclass
class Lane:
    """Records flowing in one direction of one edge."""

    live: Optional[CheckinRecord] = None
    cache: deque = field(default_factory=deque)
    high_ctr: int = 0
    consumed_ctr: int = 0
    offered: Optional[CheckinRecord] = None


@dataclass
class User:
    name: str
    salt: str
    pw_hash: str
    token: str
    pub: Optional[str]


class RelayState:
    """All server state.  ``handle_line`` is the single entry point and is
    serialized by one lock, which makes every operation linearizable."""

    def __init__(self, config: ServerConfig, clock: Callable[[], float] = time.monotonic,
                 keep_transcript: bool = True):
        self.config = config
        self.keep_transcript = keep_transcript
        self.clock = clock
        self.users: dict[str, User] = {}
        self.tokens: dict[str, str] = {}
        self.requests: set[tuple[str, str]] = set()
        self.lanes: dict[tuple[str, str], Lane] = {}
        self.last_seen: dict[str, float] = {}
        self.transcript: list[dict] = []
        self._seq = 0
        self._lock = threading.Lock()
        self._snapshot = None
        self._transcript_fh = None
        if config.snapshot and os.path.exists(config.snapshot):
            self._replay(config.snapshot)
        if config.snapshot:
            self._snapshot = open(config.snapshot, "a", encoding="utf-8")
        if config.transcript:
            self._transcript_fh = open(config.transcript, "a", encoding="utf-8")

    def close(self):
        for fh in (self._snapshot, self._transcript_fh):
            if fh:
                fh.close()

    # -- persistence ---------------------------------------------------------

    def _replay(self, path: str):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    self._apply(json.loads(line))
        log.info("replayed snapshot %s", path)

    def _commit(self, ev: dict):
        self._apply(ev)
        if self._snapshot:
            self._snapshot.write(json.dumps(ev, separators=(",", ":")) + "\n")
            self._snapshot.flush()

    def _apply(self, ev: dict):
        kind = ev["ev"]
        if kind == "user":
            u = User(ev["user"], ev["salt"], ev["hash"], ev["token"], ev.get("pub"))
            self.users[u.name] = u
            self.tokens[u.token] = u.name
        elif kind == "contact":
            self.requests.add((ev["user"], ev["peer"]))
        elif kind == "checkin":
            lane = self._lane(ev["from"], ev["to"])
            rec = record_from_wire(ev["rec"])
            lane.live = rec
            # A live record supersedes every cached row below its counter.
            while lane.cache and lane.cache[0].ctr < rec.ctr:
                lane.cache.popleft()
            lane.high_ctr = rec.ctr
        elif kind == "cache":
            lane = self._lane(ev["from"], ev["to"])
            for body in ev["rows"]:
                rec = record_from_wire(body)
                lane.cache.append(rec)
                lane.high_ctr = rec.ctr
        elif kind == "pop":
            lane = self._lane(ev["from"], ev["to"])
            lane.live = lane.cache.popleft()
        elif kind == "consume":
            lane = self._lane(ev["from"], ev["to"])
            lane.consumed_ctr = ev["ctr"]
            if lane.live is not None and lane.live.ctr <= ev["ctr"]:
                lane.live = None
            if lane.offered is not None and lane.offered.ctr <= ev["ctr"]:
                lane.offered = None
        else:
            raise ValueError(f"unknown snapshot event {kind!r}")

    # -- helpers ---------------------------------------------------------------

    def _lane(self, sender: str, receiver: str) -> Lane:
        lane = self.lanes.get((sender, receiver))
        if lane is None:
            lane = self.lanes[(sender, receiver)] = Lane()
        return lane

    def edge_live(self, a: str, b: str) -> bool:
        return (a, b) in self.requests and (b, a) in self.requests

    def online(self, user: str) -> bool:
        seen = self.last_seen.get(user)
        return seen is not None and self.clock() - seen < self.config.t_offline

    def _hash(self, password: str, salt: str) -> str:
        return hashlib.pbkdf2_hmac(
            "sha256", password.encode(), bytes.fromhex(salt), self.config.kdf_iterations
        ).hex()

    def _auth(self, req: dict) -> str:
        user = self.tokens.get(req.get("token"))
        if user is None:
            raise ProtocolError(ERR_AUTH)
        self.last_seen[user] = self.clock()
        return user

    def _peer(self, req: dict, key: str) -> str:
        peer = req.get(key)
        if not isinstance(peer, str) or peer not in self.users:
            raise ProtocolError(ERR_NO_USER)
        return peer

    def _live_edge(self, user: str, peer: str):
        if not self.edge_live(user, peer):
            raise ProtocolError(ERR_NO_EDGE)

    # -- operations --------------------------------------------------------------

    def op_register(self, req: dict) -> dict:
        user, password, pub = req.get("user"), req.get("pass"), req.get("pub")
        if not isinstance(user, str) or not _USER_RE.match(user) or not isinstance(password, str):
            raise ProtocolError(ERR_BAD_REQ, "bad user or pass")
        if pub is not None and (not isinstance(pub, str) or not _PUB_RE.match(pub)):
            raise ProtocolError(ERR_BAD_REQ, "bad public key")
        if user in self.users:
            raise ProtocolError(ERR_DUP_USER)
        salt = secrets.token_hex(16)
        token = secrets.token_hex(16)
        self._commit({"ev": "user", "user": user, "salt": salt,
                      "hash": self._hash(password, salt), "token": token, "pub": pub})
        self.last_seen[user] = self.clock()
        return {"ok": True, "token": token}

    def op_login(self, req: dict) -> dict:
        u = self.users.get(req.get("user"))
        password = req.get("pass")
        if u is None or not isinstance(password, str) or not hmac.compare_digest(
            self._hash(password, u.salt), u.pw_hash
        ):
            raise ProtocolError(ERR_AUTH)
        self.last_seen[u.name] = self.clock()
        return {"ok": True, "token": u.token}

    def op_add_contact(self, req: dict) -> dict:
        user = self._auth(req)
        peer = self._peer(req, "peer")
        if peer == user:
            raise ProtocolError(ERR_BAD_PEER)
        if (user, peer) not in self.requests:
            self._commit({"ev": "contact", "user": user, "peer": peer})
        return {"ok": True, "live": self.edge_live(user, peer), "pub": self.users[peer].pub}

    def op_checkin(self, req: dict) -> dict:
        user = self._auth(req)
        peer = self._peer(req, "to")
        self._live_edge(user, peer)
        rec = self._record(req)
        if rec.ctr <= self._lane(user, peer).high_ctr:
            raise ProtocolError(ERR_BAD_CTR)
        self._commit({"ev": "checkin", "from": user, "to": peer, "rec": record_to_wire(rec)})
        return {"ok": True}

    def op_cache(self, req: dict) -> dict:
        user = self._auth(req)
        peer = self._peer(req, "to")
        self._live_edge(user, peer)
        rows = req.get("rows")
        if not isinstance(rows, list):
            raise ProtocolError(ERR_BAD_REQ, "rows must be a list")
        recs = [self._record(r) for r in rows]
        prev = self._lane(user, peer).high_ctr
        for rec in recs:
            if rec.ctr <= prev:
                raise ProtocolError(ERR_BAD_CTR)
            prev = rec.ctr
        if recs:
            self._commit({"ev": "cache", "from": user, "to": peer,
                          "rows": [record_to_wire(r) for r in recs]})
        return {"ok": True}

    def op_fetch(self, req: dict) -> dict:
        user = self._auth(req)
        peer = self._peer(req, "peer")
        self._live_edge(user, peer)
        lane = self._lane(peer, user)
        if lane.live is None and lane.cache and not self.online(peer):
            self._commit({"ev": "pop", "from": peer, "to": user})
        if lane.live is None:
            return {"ok": True, "empty": True}
        lane.offered = lane.live
        h = lane.live
        return {"ok": True, "ctr": h.ctr, "eb": [h.eb_mine, h.eb_peer], "cell": h.cell}

    def op_finish(self, req: dict) -> dict:
        user = self._auth(req)
        peer = self._peer(req, "peer")
        self._live_edge(user, peer)
        lane = self._lane(peer, user)
        ctr = req.get("ctr")
        if not isinstance(ctr, int) or isinstance(ctr, bool):
            raise ProtocolError(ERR_BAD_REQ, "ctr must be an integer")
        if ctr <= lane.consumed_ctr:
            raise ProtocolError(ERR_CONSUMED)
        if lane.offered is None or lane.offered.ctr != ctr:
            raise ProtocolError(ERR_UNKNOWN_CTR)
        try:
            v1 = Vector2.from_wire(req.get("vec"))
        except ValueError as exc:
            raise ProtocolError(ERR_BAD_REQ, str(exc)) from None
        # Identical arithmetic for every protocol case.
        m = inner_product(v1, lane.offered.vec)
        self._commit({"ev": "consume", "from": peer, "to": user, "ctr": ctr})
        return {"ok": True, "m": to_hex(m)}

    @staticmethod
    def _record(body) -> CheckinRecord:
        if not isinstance(body, dict):
            raise ProtocolError(ERR_BAD_REQ, "record must be an object")
        try:
            return record_from_wire(body)
        except (ValueError, TypeError, KeyError) as exc:
            raise ProtocolError(ERR_BAD_REQ, str(exc)) from None

    _OPS = {
        "register": op_register,
        "login": op_login,
        "add_contact": op_add_contact,
        "checkin": op_checkin,
        "cache": op_cache,
        "fetch": op_fetch,
        "finish": op_finish,
    }

    # -- entry point ---------------------------------------------------------------

    def handle_line(self, line: bytes) -> bytes:
        with self._lock:
            req = None
            try:
                req = json.loads(line)
                if not isinstance(req, dict):
                    raise ValueError("request must be a JSON object")
                handler = self._OPS.get(req.get("op"))
                if handler is None:
                    raise ProtocolError(ERR_BAD_REQ, f"unknown op {req.get('op')!r}")
                resp = handler(self, req)
            except ProtocolError as exc:
                resp = {"ok": False, "err": exc.code}
            except ValueError:
                resp = {"ok": False, "err": ERR_BAD_REQ}
            out = encode(resp)
            self._record_transcript(req, line, out)
            return out

    def _record_transcript(self, req, line: bytes, out: bytes):
        if isinstance(req, dict):
            sender = self.tokens.get(req.get("token")) or req.get("user")
            receiver = req.get("to", req.get("peer"))
            op = req.get("op")
        else:
            sender = receiver = op = None
        self._seq += 1
        entry = {
            "seq": self._seq,
            "ts": time.time(),
            "sender": sender,
            "receiver": receiver,
            "op": op,
            "request": line.decode("utf-8", "replace").rstrip("\n"),
            "response": out.decode().rstrip("\n"),
        }
        if self.keep_transcript:
            self.transcript.append(entry)
        if self._transcript_fh:
            self._transcript_fh.write(json.dumps(entry, separators=(",", ":")) + "\n")
            self._transcript_fh.flush()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        state: RelayState = self.server.state
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        buffer = b""
        while True:
            try:
                chunk = sock.recv(65536)
            except OSError:
                break
            if not chunk:
                break
            buffer += chunk
            *lines, buffer = buffer.split(b"\n")
            replies = [state.handle_line(line) for line in lines if line.strip()]
            if replies:
                sock.sendall(b"".join(replies))


class RelayServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, config: ServerConfig, clock: Callable[[], float] = time.monotonic,
                 keep_transcript: bool = True):
        self.state = RelayState(config, clock, keep_transcript)
        super().__init__(parse_address(config.listen), _Handler)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def server_close(self):
        super().server_close()
        self.state.close()


def serve_in_thread(config: ServerConfig, clock: Callable[[], float] = time.monotonic) -> RelayServer:
    """Start a server on a background thread; ``config.listen`` may use port 0."""
    server = RelayServer(config, clock)
    threading.Thread(target=server.serve_forever, args=(0.05,), name="relay", daemon=True).start()
    return server


def stop(server: RelayServer):
    server.shutdown()
    server.server_close()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="albatross-server", description="Location relay server.")
    ap.add_argument("--config", help="key=value config file")
    ap.add_argument("--listen", help="host:port (default 127.0.0.1:7070)")
    ap.add_argument("--t-offline", type=float, help="seconds of inactivity before a user counts as offline")
    ap.add_argument("--snapshot", help="append-only state log, replayed at start")
    ap.add_argument("--transcript", help="append every request/reply pair to this JSONL file")
    ap.add_argument("--kdf-iterations", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    config = load_config(args.config)
    for key in ("listen", "t_offline", "snapshot", "transcript", "kdf_iterations"):
        value = getattr(args, key)
        if value is not None:
            setattr(config, key, value)
    server = RelayServer(config, keep_transcript=False)
    # Printed so a parent process can pick up an ephemeral port.
    print(f"listening {server.address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
