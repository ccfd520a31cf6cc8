"""What a curious relay operator can learn, computed only from transcript bytes."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable


def load_transcript(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _shape(value):
    # Field names and byte lengths survive; the values themselves do not.
    if isinstance(value, dict):
        return tuple((k, _shape(v)) for k, v in value.items())
    if isinstance(value, list):
        return ("list", tuple(_shape(v) for v in value))
    return (type(value).__name__, len(json.dumps(value, separators=(",", ":"))))


def _parse(raw: str):
    try:
        return json.loads(raw)
    except ValueError:
        return raw


def message_schema(entry: dict) -> tuple:
    return (
        entry["sender"],
        entry["receiver"],
        entry["op"],
        _shape(_parse(entry["request"])),
        _shape(_parse(entry["response"])),
    )


@dataclass
class Verdict:
    ok: bool
    diffs: list[str] = field(default_factory=list)

    def __bool__(self):
        return self.ok

    def __str__(self):
        if self.ok:
            return "indistinguishable"
        return "distinguishable:\n  " + "\n  ".join(self.diffs[:20])


def assert_indistinguishable(t1: list[dict], t2: list[dict]) -> Verdict:
    """Structural comparison of two transcripts.

    Passes iff both carry the same message-type sequence, the same message
    counts per edge and identical field names and byte lengths everywhere.
    """
    diffs = []
    if len(t1) != len(t2):
        diffs.append(f"message count {len(t1)} != {len(t2)}")
    c1 = Counter((e["sender"], e["receiver"], e["op"]) for e in t1)
    c2 = Counter((e["sender"], e["receiver"], e["op"]) for e in t2)
    for key in sorted(set(c1) | set(c2), key=str):
        if c1[key] != c2[key]:
            diffs.append(f"count {key}: {c1[key]} != {c2[key]}")
    for i, (a, b) in enumerate(zip(t1, t2)):
        sa, sb = message_schema(a), message_schema(b)
        if sa != sb:
            diffs.append(f"message {i}: {sa[:3]} {sa[3:]} != {sb[:3]} {sb[3:]}")
    return Verdict(not diffs, diffs)


@dataclass
class ServerView:
    contacts: dict[str, set[str]]
    active: dict[str, tuple[float, float]]
    edge_ops: Counter

    def table(self) -> str:
        lines = []
        for user in sorted(self.contacts):
            first, last = self.active.get(user, (0.0, 0.0))
            lines.append(f"{user}: contacts={sorted(self.contacts[user])} active={last - first:.2f}s")
        return "\n".join(lines)


def server_view(transcript: Iterable[dict]) -> ServerView:
    """The operator's summary: contact sets, activity windows, per-edge traffic."""
    contacts = defaultdict(set)
    active = {}
    edge_ops = Counter()
    for e in transcript:
        sender, receiver = e["sender"], e["receiver"]
        if sender is None:
            continue
        first, _ = active.get(sender, (e["ts"], e["ts"]))
        active[sender] = (first, e["ts"])
        if receiver is not None:
            if e["op"] == "add_contact":
                contacts[sender].add(receiver)
            edge_ops[(sender, receiver, e["op"])] += 1
    return ServerView(dict(contacts), active, edge_ops)


def write_transcript(entries: list[dict], path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e, separators=(",", ":")) + "\n")
    return path
