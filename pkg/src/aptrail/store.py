"""Durable storage: append-only journal plus deterministic snapshots.

Every write lands as one JSON line in a journal that is never truncated;
current state is the full replay of that journal (last write per key wins).
compact() freezes the state into a snapshot whose bytes are reproducible,
so replaying the journal and serializing must match the snapshot exactly.
Run manifests capture the seed and parameters of each pipeline run.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

from .model import format_ts, utcnow

logger = logging.getLogger(__name__)

JOURNAL_NAME = "journal.jsonl"
SNAPSHOT_NAME = "snapshot.json"
RUNS_DIR = "runs"

TABLE_LISTINGS = "listings"
TABLE_IMAGES = "images"
TABLE_CANDIDATES = "candidates"
TABLE_WPS = "wps_observations"
TABLE_ANNOTATIONS = "annotations"

Key = tuple[str, ...]


def _check_key(key: Key) -> Key:
    key = tuple(key)
    if not key or not all(isinstance(part, str) for part in key):
        raise TypeError("key must be a non-empty tuple of strings")
    return key


def replay_journal(path: Path) -> dict[str, dict[Key, dict]]:
    state: dict[str, dict[Key, dict]] = {}
    if not path.exists():
        return state
    with path.open("r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"corrupt journal line {n}: {exc}") from exc
            state.setdefault(rec["table"], {})[tuple(rec["key"])] = rec["value"]
    return state


def state_bytes(state: dict[str, dict[Key, dict]]) -> bytes:
    """Canonical serialization: sorted tables, sorted keys, fixed separators."""
    doc = {
        table: [[list(key), rows[key]] for key in sorted(rows)]
        for table, rows in sorted(state.items())
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


class Store:
    """Keyed tables over a single journal file."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.journal_path = self.root / JOURNAL_NAME
        self.snapshot_path = self.root / SNAPSHOT_NAME
        self._state = replay_journal(self.journal_path)
        self._journal = self.journal_path.open("a", encoding="utf-8")
        # single writer: concurrent pipeline stages funnel through this lock
        self._write_lock = threading.Lock()

    def close(self) -> None:
        self._journal.close()

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def put(self, table: str, key: Key, value: dict) -> bool:
        """Write one row. Returns False without journaling when the stored
        value is already identical, so reruns do not grow the journal."""
        key = _check_key(key)
        with self._write_lock:
            rows = self._state.setdefault(table, {})
            if key in rows and rows[key] == value:
                return False
            rec = {"table": table, "key": list(key), "value": value}
            self._journal.write(json.dumps(rec, sort_keys=True) + "\n")
            self._journal.flush()
            rows[key] = value
            return True

    def get(self, table: str, key: Key) -> Optional[dict]:
        return self._state.get(table, {}).get(_check_key(key))

    def exists(self, table: str, key: Key) -> bool:
        return _check_key(key) in self._state.get(table, {})

    def items(self, table: str) -> Iterator[tuple[Key, dict]]:
        rows = self._state.get(table, {})
        for key in sorted(rows):
            yield key, rows[key]

    def count(self, table: str) -> int:
        return len(self._state.get(table, {}))

    def tables(self) -> list[str]:
        return sorted(self._state)

    def compact(self) -> Path:
        """Freeze current state to the snapshot file; journal stays intact."""
        data = state_bytes(self._state)
        tmp = self.snapshot_path.with_suffix(".tmp")
        tmp.write_bytes(data)
        tmp.replace(self.snapshot_path)
        logger.info("snapshot written: %d bytes, %d tables",
                    len(data), len(self._state))
        return self.snapshot_path

    def verify_snapshot(self) -> bool:
        """True when replaying the journal reproduces the snapshot bytes."""
        if not self.snapshot_path.exists():
            return False
        replayed = replay_journal(self.journal_path)
        return state_bytes(replayed) == self.snapshot_path.read_bytes()


@dataclass
class RunManifest:
    """What a pipeline run was told to do and what it produced."""

    kind: str
    seed: Optional[int] = None
    params: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    run_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    started_at: str = field(default_factory=lambda: format_ts(utcnow()))
    finished_at: Optional[str] = None

    def finish(self, **metrics) -> "RunManifest":
        self.metrics.update(metrics)
        self.finished_at = format_ts(utcnow())
        return self

    def to_record(self) -> dict:
        return {
            "run_id": self.run_id,
            "kind": self.kind,
            "seed": self.seed,
            "params": self.params,
            "metrics": self.metrics,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RunManifest":
        return cls(
            kind=rec["kind"],
            seed=rec.get("seed"),
            params=rec.get("params", {}),
            metrics=rec.get("metrics", {}),
            run_id=rec["run_id"],
            started_at=rec["started_at"],
            finished_at=rec.get("finished_at"),
        )


def save_manifest(root: str | os.PathLike, manifest: RunManifest) -> Path:
    runs = Path(root) / RUNS_DIR
    runs.mkdir(parents=True, exist_ok=True)
    path = runs / f"{manifest.run_id}.json"
    path.write_text(json.dumps(manifest.to_record(), indent=2, sort_keys=True)
                    + "\n", encoding="utf-8")
    return path


def load_manifests(root: str | os.PathLike) -> list[RunManifest]:
    runs = Path(root) / RUNS_DIR
    if not runs.is_dir():
        return []
    out = []
    for path in sorted(runs.glob("*.json")):
        out.append(RunManifest.from_record(
            json.loads(path.read_text(encoding="utf-8"))))
    return out
