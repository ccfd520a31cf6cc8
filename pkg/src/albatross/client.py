"""Client library: local store plus the protocol driver used by the CLI and harness.

Store layout under the data directory, per identity ``<user>``:

``<user>.keys``
    The secret core: 17 bytes per contact (16-byte edge key, 1-byte
    granularity), in slot order.
``<user>.jsonl``
    One identity line, then one bookkeeping line per contact (counters,
    cached peer state, fake location).
``<user>.lock``
    Held with ``flock`` while a process works on the store.
"""

from __future__ import annotations

import fcntl
import json
import os
import secrets
from pathlib import Path
from typing import Iterable, Optional

from . import protocols
from .crypto import KEY_BYTES, IdentityKey, SharedKey, key_agree
from .errors import ConfigError, ProtocolError
from .field import from_hex
from .geo import GeoPoint
from .protocols import DirectionState, Granularity, RetrievalResult
from .wire import Connection, check, header_from_wire, record_to_wire

CORE_BYTES = KEY_BYTES + 1


class StoreLocked(ConfigError):
    pass


def _opt_point(text: Optional[str]) -> Optional[GeoPoint]:
    return GeoPoint.parse(text) if text else None


def _opt_str(point: Optional[GeoPoint]) -> Optional[str]:
    return str(point) if point is not None else None


class ClientStore:
    def __init__(self, directory, user: str, token: str, identity: IdentityKey,
                 location: Optional[GeoPoint] = None):
        self.directory = Path(directory)
        self.user = user
        self.token = token
        self.identity = identity
        self.location = location
        self.contacts: dict[str, DirectionState] = {}
        self._lock_fh = None

    # -- paths ---------------------------------------------------------------

    @property
    def keys_path(self) -> Path:
        return self.directory / f"{self.user}.keys"

    @property
    def meta_path(self) -> Path:
        return self.directory / f"{self.user}.jsonl"

    @staticmethod
    def identities(directory) -> list[str]:
        return sorted(p.stem for p in Path(directory).glob("*.jsonl"))

    # -- locking -------------------------------------------------------------

    def lock(self):
        self.directory.mkdir(parents=True, exist_ok=True)
        fh = open(self.directory / f"{self.user}.lock", "a")
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            fh.close()
            raise StoreLocked(f"store for {self.user} is in use by another process") from None
        self._lock_fh = fh

    def unlock(self):
        if self._lock_fh:
            fcntl.flock(self._lock_fh, fcntl.LOCK_UN)
            self._lock_fh.close()
            self._lock_fh = None

    # -- persistence -----------------------------------------------------------

    def secret_core(self) -> bytes:
        return b"".join(s.key.raw + bytes([s.my_pref]) for s in self.contacts.values())

    def save(self):
        self.directory.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps({
            "kind": "identity",
            "user": self.user,
            "token": self.token,
            "identity_key": self.identity.private_hex(),
            "location": _opt_str(self.location),
        })]
        for slot, s in enumerate(self.contacts.values()):
            lines.append(json.dumps({
                "kind": "contact",
                "peer": s.peer,
                "slot": slot,
                "fake": _opt_str(s.my_fake),
                "last_sent_ctr": s.last_sent_ctr,
                "last_consumed_ctr": s.last_consumed_ctr,
                "peer_bit": s.cached_peer_bit,
                "peer_location": _opt_str(s.cached_peer_location),
                "peer_nearby": s.cached_peer_nearby,
            }))
        _atomic_write(self.keys_path, self.secret_core())
        _atomic_write(self.meta_path, ("\n".join(lines) + "\n").encode())

    @classmethod
    def load(cls, directory, user: Optional[str] = None) -> ClientStore:
        directory = Path(directory)
        if user is None:
            found = cls.identities(directory)
            if len(found) != 1:
                raise ConfigError(
                    f"expected exactly one identity in {directory}, found {len(found)}; pass --user"
                )
            user = found[0]
        meta = directory / f"{user}.jsonl"
        if not meta.exists():
            raise ConfigError(f"no identity {user!r} in {directory}")
        with open(meta, encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        ident = rows[0]
        store = cls(directory, ident["user"], ident["token"],
                    IdentityKey.from_hex(ident["identity_key"]), _opt_point(ident["location"]))
        core = store.keys_path.read_bytes()
        if len(core) != CORE_BYTES * (len(rows) - 1):
            raise ConfigError(f"{store.keys_path} does not match {meta}")
        for row in rows[1:]:
            off = CORE_BYTES * row["slot"]
            store.contacts[row["peer"]] = DirectionState(
                me=store.user,
                peer=row["peer"],
                key=SharedKey(core[off:off + KEY_BYTES]),
                my_pref=Granularity(core[off + KEY_BYTES]),
                my_fake=_opt_point(row["fake"]),
                last_sent_ctr=row["last_sent_ctr"],
                last_consumed_ctr=row["last_consumed_ctr"],
                cached_peer_bit=row["peer_bit"],
                cached_peer_location=_opt_point(row["peer_location"]),
                cached_peer_nearby=row["peer_nearby"],
            )
        return store


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class Client:
    """Drives the protocol for one identity against one relay connection."""

    def __init__(self, store: ClientStore, conn: Connection):
        self.store = store
        self.conn = conn

    @classmethod
    def register(cls, directory, user: str, conn: Connection, password: Optional[str] = None) -> Client:
        identity = IdentityKey()
        resp = check(conn.call({
            "op": "register",
            "user": user,
            "pass": password or secrets.token_hex(16),
            "pub": identity.public_hex(),
        }))
        store = ClientStore(directory, user, resp["token"], identity)
        store.save()
        return cls(store, conn)

    def _req(self, op: str, **fields) -> dict:
        return {"op": op, "token": self.store.token, **fields}

    def _state(self, peer: str) -> DirectionState:
        try:
            return self.store.contacts[peer]
        except KeyError:
            raise ConfigError(f"{peer!r} is not a contact") from None

    def _peers(self, peer: Optional[str]) -> list[str]:
        return [peer] if peer else list(self.store.contacts)

    # -- contacts --------------------------------------------------------------

    def add_contact(self, peer: str, psk: Optional[str] = None) -> bool:
        """Invite ``peer``; returns whether the edge is now live (both sides added)."""
        resp = check(self.conn.call(self._req("add_contact", peer=peer)))
        if peer not in self.store.contacts:
            key = key_agree(self.store.identity, resp.get("pub"), preshared=psk)
            self.store.contacts[peer] = DirectionState.new(self.store.user, peer, key)
        return resp["live"]

    def set_pref(self, peer: str, pref: Granularity, fake: Optional[GeoPoint] = None):
        state = self._state(peer)
        if pref == Granularity.FAKE:
            fake = fake or state.my_fake
            if fake is None:
                raise ConfigError("granularity 'fake' needs a fake location")
            state.my_fake = fake
        state.my_pref = pref

    # -- sharing ---------------------------------------------------------------

    def checkin(self, location: GeoPoint, peer: Optional[str] = None) -> dict[str, Optional[str]]:
        """Check in to one contact or all.  Returns peer -> error code (None on success)."""
        self.store.location = location
        peers = self._peers(peer)
        if peer:
            self._state(peer)
        msgs = [
            self._req("checkin", to=p,
                      **record_to_wire(protocols.unified_checkin(self.store.contacts[p], location)))
            for p in peers
        ]
        return {p: None if r.get("ok") else r.get("err") for p, r in zip(peers, self.conn.call_many(msgs))}

    def cache_fill(self, n: int, peer: Optional[str] = None) -> dict[str, Optional[str]]:
        peers = self._peers(peer)
        if peer:
            self._state(peer)
        msgs = [
            self._req("cache", to=p, rows=[record_to_wire(r) for r in
                                           protocols.batch_cache(self.store.contacts[p], n)])
            for p in peers
        ]
        return {p: None if r.get("ok") else r.get("err") for p, r in zip(peers, self.conn.call_many(msgs))}

    def retrieve(self, peer: str, location: Optional[GeoPoint] = None) -> RetrievalResult:
        self._state(peer)
        result = self.retrieve_many([peer], location)[peer]
        if isinstance(result, ProtocolError):
            raise result
        return result

    def retrieve_all(self, location: Optional[GeoPoint] = None):
        return self.retrieve_many(list(self.store.contacts), location)

    def retrieve_many(self, peers: Iterable[str], location: Optional[GeoPoint] = None) -> dict:
        """Two pipelined rounds: fetch every header, then finish every query.

        Values are ``RetrievalResult`` or, for contacts the relay refused,
        the ``ProtocolError``.
        """
        location = location or self.store.location
        peers = list(peers)
        results: dict = {}
        queries = {}
        for peer, resp in zip(peers, self.conn.call_many(self._req("fetch", peer=p) for p in peers)):
            state = self.store.contacts[peer]
            if not resp.get("ok"):
                results[peer] = ProtocolError(resp.get("err", "UNKNOWN"))
            elif resp.get("empty"):
                results[peer] = protocols.last_known(state)
            else:
                queries[peer] = protocols.retrieve_phase1(state, header_from_wire(resp), location)
        finishes = self.conn.call_many(
            self._req("finish", peer=p, ctr=q.ctr, vec=q.v1.to_wire()) for p, q in queries.items()
        )
        for (peer, q), resp in zip(queries.items(), finishes):
            if not resp.get("ok"):
                results[peer] = ProtocolError(resp.get("err", "UNKNOWN"))
                continue
            results[peer] = protocols.retrieve_phase2(self.store.contacts[peer], q, from_hex(resp["m"]))
        return {p: results[p] for p in peers}
