"""Runtime configuration: one flat set of documented keys.

Sources stack lowest-to-highest: built-in defaults, a JSON config file,
then environment variables prefixed APTRAIL_ (key name upper-cased, e.g.
APTRAIL_DAILY_QUOTA=200). Tuple-valued keys take comma-separated text.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

ENV_PREFIX = "APTRAIL_"


@dataclass(frozen=True)
class Config:
    daily_quota: int = 5000          # marketplace API calls per UTC day
    results_cap: int = 10_000        # deepest reachable search result
    page_size: int = 200             # listings per search call
    image_size_px: int = 1600        # requested longest-side pixels
    full_runs_per_day: int = 2       # exhaustive passes per day
    incremental_interval_hours: int = 3
    rotations: tuple[int, ...] = (0, 90, 180, 270)
    stationary_km: float = 1.0       # movement classification threshold
    band_gap: int = 512              # model-band coalescing distance
    word_limit: int = 10             # partition 2 / partition 3 boundary
    sample_per_partition: int = 250  # annotation worklist size per bin
    seed: int = 0                    # base seed for all sampling

    def __post_init__(self):
        positive = ("daily_quota", "results_cap", "page_size",
                    "image_size_px", "full_runs_per_day",
                    "incremental_interval_hours", "band_gap",
                    "sample_per_partition")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.stationary_km <= 0:
            raise ValueError("stationary_km must be positive")
        if self.word_limit < 0:
            raise ValueError("word_limit must be >= 0")
        if not self.rotations:
            raise ValueError("rotations must not be empty")

    def to_record(self) -> dict:
        rec = dataclasses.asdict(self)
        rec["rotations"] = list(self.rotations)
        return rec


def _coerce(name: str, kind, raw):
    if kind == tuple[int, ...]:
        if isinstance(raw, str):
            parts = [p for p in raw.split(",") if p.strip()]
            return tuple(int(p) for p in parts)
        return tuple(int(v) for v in raw)
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    raise ValueError(f"config key {name} has unsupported type {kind}")


def load_config(path: Optional[str | Path] = None,
                env: Optional[Mapping[str, str]] = None) -> Config:
    env = os.environ if env is None else env
    values: dict = {}
    known = {f.name: f.type for f in dataclasses.fields(Config)}
    if path is not None:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
        for key, raw in data.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = raw
    for name in known:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            values[name] = env[env_key]
    typed = {}
    for name, raw in values.items():
        kind = Config.__dataclass_fields__[name].type
        # dataclass field types arrive as strings under future annotations
        if isinstance(kind, str):
            kind = {"int": int, "float": float,
                    "tuple[int, ...]": tuple[int, ...]}[kind]
        typed[name] = _coerce(name, kind, raw)
    return Config(**typed)
