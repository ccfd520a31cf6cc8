"""Batch-retrieval benchmark and the linear fit over contact counts."""

from __future__ import annotations

import statistics
import subprocess
import sys
import tempfile
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

from .. import protocols
from ..client import Client
from ..geo import encode_geo
from ..protocols import Granularity
from ..wire import Connection, check, parse_address, record_to_wire

# Contact preferences cycle through every granularity, so the measured batch
# mixes plain shares, sentinels and proximity tests.
_MIX = [Granularity.AVAILABLE, Granularity.CIRCLE, Granularity.APPROX,
        Granularity.NEARBY, Granularity.INVISIBLE, Granularity.FAKE]


@contextmanager
def spawn_server(*extra: str) -> Iterator[str]:
    """Run a relay in a child process on an ephemeral port; yields its address."""
    proc = subprocess.Popen(
        [sys.executable, "-m", "albatross.server", "--listen", "127.0.0.1:0", *extra],
        stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True,
    )
    try:
        line = proc.stdout.readline()
        if not line.startswith("listening "):
            raise RuntimeError(f"server failed to start: {line!r}")
        yield line.split()[1]
    finally:
        proc.terminate()
        proc.wait(timeout=10)


@dataclass
class Fit:
    slope: float
    intercept: float
    r2: float

    def __str__(self):
        return f"seconds = {self.slope:.3e} * n + {self.intercept:.4f}  (R^2 = {self.r2:.4f})"


def fit_scaling(rows: Sequence[tuple[int, int, float]]) -> Fit:
    """Least-squares line through (contact count, mean seconds)."""
    by_n = defaultdict(list)
    for n, _run, seconds in rows:
        by_n[n].append(seconds)
    if len(by_n) < 4:
        raise ValueError("need at least four distinct contact counts")
    xs = sorted(by_n)
    ys = [statistics.fmean(by_n[n]) for n in xs]
    slope, intercept = statistics.linear_regression(xs, ys)
    mean_y = statistics.fmean(ys)
    ss_tot = sum((y - mean_y) ** 2 for y in ys)
    ss_res = sum((y - (slope * x + intercept)) ** 2 for x, y in zip(xs, ys))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return Fit(slope, intercept, r2)


def _population(address, n: int, workdir: Path):
    """One retriever with ``n`` live contacts, every client sharing one connection."""
    conn = Connection(parse_address(address))
    tag = str(time.monotonic_ns())[-8:]
    me = Client.register(workdir / "me", f"r{n}_{tag}", conn, password="bench")
    contacts = []
    base = encode_geo(37.4, -122.1)
    for i in range(n):
        c = Client.register(workdir / f"c{i}", f"c{n}_{tag}_{i:05d}", conn, password="bench")
        me.add_contact(c.store.user)
        c.add_contact(me.store.user)
        pref = _MIX[i % len(_MIX)]
        fake = encode_geo(48.85, 2.35)
        c.set_pref(me.store.user, pref, fake)
        # Half the proximity contacts are in the retriever's cell, half far away.
        dlat = 1_000 if i % 12 == 3 else 300_000
        c.store.location = type(base)(base.lat_fx + dlat, base.lon_fx)
        contacts.append(c)
    for c in contacts:
        if c.store.contacts[me.store.user].my_pref == Granularity.NEARBY:
            me.set_pref(c.store.user, Granularity.NEARBY)
    me.store.location = base
    return me, contacts


def _store_checkins(me: Client, contacts: list[Client]):
    msgs = []
    for c in contacts:
        rec = protocols.unified_checkin(c.store.contacts[me.store.user], c.store.location)
        msgs.append({"op": "checkin", "token": c.store.token, "to": me.store.user, **record_to_wire(rec)})
    for resp in me.conn.call_many(msgs):
        check(resp)


def _warm_up(me: Client, contacts: list[Client]):
    # Let both sides learn each other's protocol bit so proximity tests run.
    me.checkin(me.store.location)
    for c in contacts:
        c.retrieve(me.store.user, c.store.location)
    _store_checkins(me, contacts)
    me.retrieve_all()


def benchmark(
    ns: Sequence[int] = (100, 250, 500, 1000),
    reps: int = 20,
    address: Optional[str] = None,
    workdir=None,
) -> list[tuple[int, int, float]]:
    """Time ``retrieve_all`` over pre-stored checkins; returns (n, run, seconds) rows."""
    workdir = Path(workdir or tempfile.mkdtemp(prefix="albatross-bench-"))
    if address is None:
        with spawn_server("--kdf-iterations", "1") as addr:
            return benchmark(ns, reps, addr, workdir)
    rows = []
    for n in ns:
        me, contacts = _population(address, n, workdir / f"n{n}")
        _warm_up(me, contacts)
        for run in range(reps):
            _store_checkins(me, contacts)
            t0 = time.perf_counter()
            results = me.retrieve_all()
            elapsed = time.perf_counter() - t0
            if len(results) != n or any(isinstance(r, Exception) for r in results.values()):
                raise RuntimeError(f"retrieval failed at n={n} run={run}")
            rows.append((n, run, elapsed))
        me.conn.close()
    return rows
