"""Newline-delimited JSON dataset files, one user per line.

Record layout (field order is fixed so files are byte-reproducible)::

    {"user_id": int, "preference": [int], "context_len": int,
     "events": [{"item_id": int, "category_id": int, "timestamp": int,
                 "features": [float], "labels": [int],
                 "action_features": [float], "dwell_time": float|null}]}

Floats carry at most 9 significant digits.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from causalgr.data.generator import Event, UserSequence, q9
from causalgr.errors import DatasetParseError

_EVENT_FIELDS = ("item_id", "category_id", "timestamp", "features", "labels",
                 "action_features", "dwell_time")


def _event_record(e: Event) -> dict:
    return {
        "item_id": e.item_id,
        "category_id": e.category_id,
        "timestamp": e.timestamp,
        "features": [q9(v) for v in e.features],
        "labels": list(e.labels),
        "action_features": [q9(v) for v in e.action_features],
        "dwell_time": None if e.dwell_time is None else q9(e.dwell_time),
    }


def user_record(seq: UserSequence) -> dict:
    return {
        "user_id": seq.user_id,
        "preference": list(seq.preference),
        "context_len": seq.context_len,
        "events": [_event_record(e) for e in seq.events],
    }


def write_dataset(sequences: Iterable[UserSequence], path: str | Path) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seq in sequences:
            fh.write(json.dumps(user_record(seq), separators=(",", ":")))
            fh.write("\n")
    return path


def _parse_user(raw: dict) -> UserSequence:
    events = []
    for k, ev in enumerate(raw["events"]):
        missing = [f for f in _EVENT_FIELDS if f not in ev]
        if missing:
            raise KeyError(f"event {k} missing {', '.join(missing)}")
        events.append(Event(
            item_id=int(ev["item_id"]), category_id=int(ev["category_id"]),
            features=[float(v) for v in ev["features"]], timestamp=int(ev["timestamp"]),
            labels=[int(v) for v in ev["labels"]],
            action_features=[float(v) for v in ev["action_features"]],
            dwell_time=None if ev["dwell_time"] is None else float(ev["dwell_time"]),
        ))
    seq = UserSequence(int(raw["user_id"]), [int(s) for s in raw["preference"]], events,
                       int(raw["context_len"]))
    if not 0 <= seq.context_len <= len(events):
        raise ValueError(f"context_len {seq.context_len} outside [0, {len(events)}]")
    return seq


def read_dataset(path: str | Path) -> list[UserSequence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(_parse_user(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetParseError(line_no, str(exc)) from exc
    return out
