"""Scenario files and the runner that plays them against a real relay.

A scenario is a JSON object::

    {
      "seed": 7,
      "t_offline": 0.5,
      "area": [37.4, -122.1, 0.5],
      "users": ["alice", "bob"],
      "edges": [["alice", "bob"]],
      "prefs": {"alice->bob": "nearby"},
      "fakes": {"bob->alice": "48.85,2.35"},
      "rounds": [
        {"locations": {"alice": "37.4,-122.1"},
         "prefs": {"bob->alice": "fake"},
         "checkin": ["alice", "bob"],
         "cache": {"bob": 5},
         "stop": ["bob"],
         "retrieve": ["alice"]}
      ]
    }

Within a round the steps run in this order: preference changes, location
updates, checkins, cache fills, stops, retrievals.  Users without a scripted
location get a seeded random one inside ``area`` (centre lat, lon, half
width in degrees).  Stopped users close their client for good; the runner
waits out ``t_offline`` before the next retrieval so the relay notices.
"""

from __future__ import annotations

import csv
import json
import random
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .. import protocols
from ..client import Client
from ..errors import AlbatrossError
from ..geo import GeoPoint, encode_geo, parse_degrees
from ..protocols import Granularity
from ..server import ServerConfig, serve_in_thread, stop
from ..wire import Connection, parse_address, record_to_wire
from .analysis import load_transcript

TIMING_HEADER = ["n_contacts", "run", "seconds"]


@dataclass
class Round:
    locations: dict[str, str] = field(default_factory=dict)
    prefs: dict[str, str] = field(default_factory=dict)
    checkin: list[str] = field(default_factory=list)
    cache: dict[str, int] = field(default_factory=dict)
    stop: list[str] = field(default_factory=list)
    retrieve: list[str] = field(default_factory=list)


@dataclass
class Scenario:
    users: list[str]
    edges: list[tuple[str, str]]
    rounds: list[Round]
    prefs: dict[str, str] = field(default_factory=dict)
    fakes: dict[str, str] = field(default_factory=dict)
    seed: int = 0
    t_offline: float = 0.5
    area: tuple[float, float, float] = (37.4, -122.1, 0.5)
    legacy: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        d = dict(d)
        d["edges"] = [tuple(e) for e in d.get("edges", [])]
        d["rounds"] = [Round(**r) for r in d.get("rounds", [])]
        if "area" in d:
            d["area"] = tuple(d["area"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> Scenario:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def contacts_of(self, user: str) -> list[str]:
        out = []
        for a, b in self.edges:
            if a == user:
                out.append(b)
            elif b == user:
                out.append(a)
        return out

    def with_prefs(self, prefs: dict[str, str], **kw) -> Scenario:
        """Same graph and schedule, different granularity assignment."""
        d = {**self.__dict__, "prefs": prefs, **kw}
        return Scenario(**d)


def edge_key(sender: str, receiver: str) -> str:
    return f"{sender}->{receiver}"


@dataclass
class ScenarioResult:
    transcript: list[dict]
    results: dict[str, list[dict]]
    timings: list[tuple[int, int, float]]
    workdir: Path

    def final(self, user: str) -> dict[str, str]:
        """Latest result per contact for ``user``."""
        out = {}
        for row in self.results.get(user, []):
            out[row["peer"]] = row["result"]
        return out


class _Player:
    def __init__(self, scenario: Scenario, address: tuple[str, int], workdir: Path):
        self.s = scenario
        self.address = address
        self.workdir = workdir
        self.rng = random.Random(scenario.seed)
        self.clients: dict[str, Client] = {}
        self.locations: dict[str, GeoPoint] = {}
        self.stopped: dict[str, float] = {}
        self.results: dict[str, list[dict]] = {u: [] for u in scenario.users}
        self.timings: list[tuple[int, int, float]] = []

    # -- setup ---------------------------------------------------------------

    def setup(self):
        for user in self.s.users:
            self.clients[user] = Client.register(
                self.workdir / "clients" / user, user, Connection(self.address)
            )
        for a, b in self.s.edges:
            self.clients[a].add_contact(b)
            self.clients[b].add_contact(a)
        self.apply_prefs(self.s.prefs)

    def apply_prefs(self, prefs: dict[str, str]):
        for key, name in prefs.items():
            sender, receiver = key.split("->")
            fake = self.s.fakes.get(key)
            self.clients[sender].set_pref(
                receiver, Granularity.parse(name), parse_degrees(fake) if fake else None
            )

    def _random_location(self) -> GeoPoint:
        lat, lon, half = self.s.area
        return encode_geo(round(lat + self.rng.uniform(-half, half), 5),
                          round(lon + self.rng.uniform(-half, half), 5))

    def location(self, user: str) -> GeoPoint:
        if user not in self.locations:
            self.locations[user] = self._random_location()
        return self.locations[user]

    def client(self, user: str) -> Client:
        if user in self.stopped:
            raise AlbatrossError(f"{user} was stopped and cannot act")
        return self.clients[user]

    # -- steps -----------------------------------------------------------------

    def checkin(self, user: str):
        errors = self.client(user).checkin(self.location(user))
        bad = {p: e for p, e in errors.items() if e}
        if bad:
            raise AlbatrossError(f"checkin by {user} refused: {bad}")

    def legacy_checkin(self, user: str):
        # Negative control: the pre-unification message shapes, where the
        # protocol in use is visible and invisible users send nothing.
        c = self.client(user)
        msgs = []
        for peer in self.s.contacts_of(user):
            state = c.store.contacts[peer]
            if state.my_pref == Granularity.INVISIBLE:
                continue
            peer_pref = self.clients[peer].store.contacts[user].my_pref
            rec = protocols.unified_checkin(state, self.location(user))
            body = record_to_wire(rec)
            if protocols.dispatch(state.my_pref, peer_pref) is protocols.Protocol.VPET:
                msgs.append({"op": "vpet_checkin", "token": c.store.token, "to": peer,
                             "ctr": rec.ctr, "cell": rec.cell, "vec": body["vec"]})
            else:
                msgs.append({"op": "psp_checkin", "token": c.store.token, "to": peer,
                             "ctr": rec.ctr, "loc": body["vec"][0][-16:]})
        c.conn.call_many(msgs)

    def cache(self, user: str, n: int):
        errors = self.client(user).cache_fill(n)
        bad = {p: e for p, e in errors.items() if e}
        if bad:
            raise AlbatrossError(f"cache fill by {user} refused: {bad}")

    def stop(self, user: str):
        c = self.client(user)
        c.store.save()
        c.conn.close()
        self.stopped[user] = time.monotonic()

    def wait_offline(self):
        if not self.stopped:
            return
        deadline = max(self.stopped.values()) + self.s.t_offline * 1.2 + 0.05
        delay = deadline - time.monotonic()
        if delay > 0:
            time.sleep(delay)

    def retrieve(self, rnd: int, user: str):
        c = self.client(user)
        if self.s.legacy:
            c.conn.call_many({"op": "legacy_fetch", "token": c.store.token, "peer": p}
                             for p in self.s.contacts_of(user))
            return
        t0 = time.perf_counter()
        got = c.retrieve_all(self.location(user))
        self.timings.append((len(got), rnd, time.perf_counter() - t0))
        for peer, result in got.items():
            if isinstance(result, Exception):
                raise result
            self.results[user].append({"round": rnd, "peer": peer, "result": str(result)})

    def play(self):
        self.setup()
        for i, rnd in enumerate(self.s.rounds):
            self.apply_prefs(rnd.prefs)
            for user, text in rnd.locations.items():
                self.locations[user] = parse_degrees(text)
            for user in rnd.checkin:
                (self.legacy_checkin if self.s.legacy else self.checkin)(user)
            for user, n in rnd.cache.items():
                self.cache(user, n)
            for user in rnd.stop:
                self.stop(user)
            if rnd.retrieve:
                self.wait_offline()
            for user in rnd.retrieve:
                self.retrieve(i, user)
        for user, c in self.clients.items():
            if user not in self.stopped:
                c.store.save()
                c.conn.close()


def run_scenario(scenario: Scenario, workdir=None, address: Optional[str] = None) -> ScenarioResult:
    """Play ``scenario`` and collect transcript, retrieval logs and timings.

    Without ``address`` a fresh relay is started for the run, so the
    transcript contains exactly this scenario's traffic.
    """
    workdir = Path(workdir or tempfile.mkdtemp(prefix="albatross-scenario-"))
    workdir.mkdir(parents=True, exist_ok=True)
    transcript_path = workdir / "transcript.jsonl"
    server = None
    if address is None:
        server = serve_in_thread(ServerConfig(
            listen="127.0.0.1:0",
            t_offline=scenario.t_offline,
            transcript=str(transcript_path),
            kdf_iterations=1,
        ))
        address = server.address
    player = _Player(scenario, parse_address(address), workdir)
    try:
        player.play()
    finally:
        if server is not None:
            stop(server)
    with open(workdir / "results.jsonl", "w", encoding="utf-8") as fh:
        for user, rows in player.results.items():
            for row in rows:
                fh.write(json.dumps({"user": user, **row}) + "\n")
    write_timings(player.timings, workdir / "timings.csv")
    transcript = load_transcript(transcript_path) if transcript_path.exists() else []
    return ScenarioResult(transcript, player.results, player.timings, workdir)


def write_timings(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIMING_HEADER)
        for n, run, seconds in rows:
            w.writerow([n, run, f"{seconds:.6f}"])


def read_timings(path) -> list[tuple[int, int, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TIMING_HEADER:
            raise ValueError(f"timing CSV must have header {','.join(TIMING_HEADER)}")
        return [(int(r["n_contacts"]), int(r["run"]), float(r["seconds"])) for r in reader]
