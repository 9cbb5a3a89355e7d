"""Positioning-system lookups and longitudinal BSSID timelines.

The positioning client is an interface taking (bssid, when); the `when`
argument lets fixtures serve simulated days, while an adapter for a real
service would ignore it. A reply of exactly (-180, -180) means the BSSID
is not in the system; that sentinel never becomes a stored observation.
"""

from __future__ import annotations

import bisect
import enum
import json
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol

from .model import MacAddress, format_ts, parse_ts, utcnow
from .store import Store, TABLE_WPS

logger = logging.getLogger(__name__)

SENTINEL_LAT = -180.0
SENTINEL_LON = -180.0


class WpsUnavailable(Exception):
    """The positioning service did not answer; safe to retry later."""


@dataclass(frozen=True)
class WpsReply:
    lat: float
    lon: float
    accuracy_m: Optional[float] = None

    @property
    def is_not_found(self) -> bool:
        return self.lat == SENTINEL_LAT and self.lon == SENTINEL_LON


class WpsClient(Protocol):
    def query(self, bssid: MacAddress, when: datetime) -> WpsReply: ...


@dataclass(frozen=True)
class GeoObservation:
    bssid: MacAddress
    lat: float
    lon: float
    observed_at: datetime
    accuracy_m: Optional[float] = None

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"lat {self.lat} outside [-90, 90]")
        if not -180.0 < self.lon <= 180.0 or self.lon == SENTINEL_LON:
            raise ValueError(f"lon {self.lon} invalid")
        if self.accuracy_m is not None and self.accuracy_m <= 0:
            raise ValueError("accuracy_m must be positive when present")


def observation_to_record(obs: GeoObservation) -> dict:
    return {
        "bssid": obs.bssid.canonical,
        "lat": obs.lat,
        "lon": obs.lon,
        "accuracy_m": obs.accuracy_m,
        "observed_at": format_ts(obs.observed_at),
    }


def observation_from_record(rec: dict) -> GeoObservation:
    return GeoObservation(
        bssid=MacAddress(rec["bssid"]),
        lat=float(rec["lat"]),
        lon=float(rec["lon"]),
        accuracy_m=rec.get("accuracy_m"),
        observed_at=parse_ts(rec["observed_at"]),
    )


class Category(str, enum.Enum):
    PRE_ONLY = "pre_only"
    POST_ONLY = "post_only"
    BOTH = "both"
    NEVER = "never"


@dataclass
class BssidTimeline:
    bssid: MacAddress
    auction_ts: datetime
    observations: list[GeoObservation] = field(default_factory=list)
    category: Optional[Category] = None
    boundary_ties: int = 0

    def append(self, obs: GeoObservation) -> None:
        """Insert keeping observed_at non-decreasing."""
        keys = [o.observed_at for o in self.observations]
        self.observations.insert(bisect.bisect_right(keys, obs.observed_at), obs)


def lookup(bssid: MacAddress, wps: WpsClient,
           when: Optional[datetime] = None) -> Optional[GeoObservation]:
    """One query; None when the service reports the not-found sentinel."""
    when = when or utcnow()
    reply = wps.query(bssid, when)
    if reply.is_not_found:
        return None
    return GeoObservation(bssid=bssid, lat=reply.lat, lon=reply.lon,
                          accuracy_m=reply.accuracy_m, observed_at=when)


@dataclass
class PollReport:
    queried: int = 0
    stored: int = 0
    not_found: int = 0
    skipped: int = 0
    failures: list[str] = field(default_factory=list)

    def __add__(self, other: "PollReport") -> "PollReport":
        return PollReport(
            queried=self.queried + other.queried,
            stored=self.stored + other.stored,
            not_found=self.not_found + other.not_found,
            skipped=self.skipped + other.skipped,
            failures=self.failures + other.failures,
        )


def _day_key(bssid: MacAddress, when: datetime) -> tuple[str, str]:
    return (bssid.canonical, when.date().isoformat())


def poll_once(bssids: Iterable[MacAddress], wps: WpsClient, store: Store,
              when: datetime, workers: int = 1) -> PollReport:
    """Query every BSSID for one day; the first reply per day wins.

    A failure is recorded and the BSSID simply comes up again next cycle.
    """
    report = PollReport()
    todo = []
    for bssid in sorted(bssids, key=lambda b: b.canonical):
        if store.exists(TABLE_WPS, _day_key(bssid, when)):
            report.skipped += 1
        else:
            todo.append(bssid)

    def one(bssid: MacAddress):
        try:
            return bssid, lookup(bssid, wps, when), None
        except WpsUnavailable as exc:
            return bssid, None, exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, todo))
    else:
        outcomes = [one(b) for b in todo]

    for bssid, obs, err in outcomes:
        report.queried += 1
        if err is not None:
            logger.warning("lookup failed for %s: %s", bssid, err)
            report.failures.append(bssid.canonical)
        elif obs is None:
            report.not_found += 1
        else:
            store.put(TABLE_WPS, _day_key(bssid, when),
                      observation_to_record(obs))
            report.stored += 1
    return report


def schedule_polling(bssids: Iterable[MacAddress], days: int, wps: WpsClient,
                     store: Store, start: Optional[datetime] = None,
                     workers: int = 1) -> PollReport:
    """Daily polling over a span of days, idempotent per (bssid, day)."""
    if days < 1:
        raise ValueError("days must be >= 1")
    start = start or utcnow()
    bssids = list(bssids)
    total = PollReport()
    for i in range(days):
        total = total + poll_once(bssids, wps, store,
                                  start + timedelta(days=i), workers=workers)
    return total


def categorize(timeline: BssidTimeline) -> Category:
    """Assign the timeline's side of the auction moment.

    An observation exactly at auction_ts counts as before; such ties are
    tallied on the timeline so the boundary convention stays auditable.
    """
    before = after = ties = 0
    for obs in timeline.observations:
        if obs.observed_at == timeline.auction_ts:
            ties += 1
            before += 1
        elif obs.observed_at < timeline.auction_ts:
            before += 1
        else:
            after += 1
    if before and after:
        cat = Category.BOTH
    elif before:
        cat = Category.PRE_ONLY
    elif after:
        cat = Category.POST_ONLY
    else:
        cat = Category.NEVER
    timeline.category = cat
    timeline.boundary_ties = ties
    return cat


def build_timelines(store: Store,
                    auction_ts_by_bssid: dict[str, datetime]
                    ) -> list[BssidTimeline]:
    """Assemble categorized timelines from stored observations.

    Every key of auction_ts_by_bssid yields a timeline, including BSSIDs
    with zero observations (category Never).
    """
    grouped: dict[str, list[GeoObservation]] = {
        b: [] for b in auction_ts_by_bssid}
    for (bssid, _day), rec in store.items(TABLE_WPS):
        if bssid in grouped:
            grouped[bssid].append(observation_from_record(rec))
    timelines = []
    for bssid, auction_ts in sorted(auction_ts_by_bssid.items()):
        tl = BssidTimeline(bssid=MacAddress(bssid), auction_ts=auction_ts)
        for obs in sorted(grouped[bssid], key=lambda o: o.observed_at):
            tl.append(obs)
        categorize(tl)
        timelines.append(tl)
    return timelines


@dataclass
class TimelineStats:
    days_observed: list[int]
    span_days: list[int]

    @property
    def median_days_observed(self) -> float:
        return statistics.median(self.days_observed) if self.days_observed else 0.0

    @property
    def median_span_days(self) -> float:
        return statistics.median(self.span_days) if self.span_days else 0.0

    def cdf_series(self, values: list[int]) -> list[tuple[int, float]]:
        """(value, fraction ≤ value) pairs, ready to plot."""
        if not values:
            return []
        ordered = sorted(values)
        n = len(ordered)
        out = []
        for i, v in enumerate(ordered, start=1):
            if i == n or ordered[i] != v:
                out.append((v, i / n))
        return out


def timeline_stats(timelines: Iterable[BssidTimeline]) -> TimelineStats:
    """Unique-day counts and first-to-last spans, skipping empty timelines."""
    days, spans = [], []
    for tl in timelines:
        if not tl.observations:
            continue
        dates = {o.observed_at.date() for o in tl.observations}
        days.append(len(dates))
        spans.append((max(dates) - min(dates)).days)
    return TimelineStats(days_observed=days, span_days=spans)


def import_observations(store: Store, path: str | Path) -> int:
    """Merge a historical observation file; (bssid, day) keeps the first."""
    added = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obs = observation_from_record(json.loads(line))
            key = _day_key(obs.bssid, obs.observed_at)
            if store.exists(TABLE_WPS, key):
                continue
            store.put(TABLE_WPS, key, observation_to_record(obs))
            added += 1
    return added


def export_observations(store: Store, path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for _key, rec in store.items(TABLE_WPS):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            count += 1
    return count


class FixtureWps:
    """Deterministic positioning service from a placement config.

    Config lines: {"bssid": "<12hex>", "accuracy_m": 25.0, "placements":
    [{"lat": .., "lon": .., "from": "<ts>", "to": "<ts>|null"}]}. A query
    inside a placement window returns its coordinates; anything else gets
    the not-found sentinel. Dates in `outages` raise WpsUnavailable.
    """

    def __init__(self, records: Iterable[dict], outages: Iterable = ()):
        self.table: dict[str, dict] = {}
        for rec in records:
            self.table[rec["bssid"]] = rec
        self.outages = {d for d in outages}
        self.query_count = 0

    @classmethod
    def from_path(cls, path: str | Path, outages: Iterable = ()) -> "FixtureWps":
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return cls(records, outages)

    def query(self, bssid: MacAddress, when: datetime) -> WpsReply:
        self.query_count += 1
        if when.date() in self.outages:
            raise WpsUnavailable(f"outage on {when.date()}")
        rec = self.table.get(bssid.canonical)
        if rec is None:
            return WpsReply(SENTINEL_LAT, SENTINEL_LON)
        for placement in rec.get("placements", ()):
            start = parse_ts(placement["from"])
            end_text = placement.get("to")
            end = parse_ts(end_text) if end_text else None
            if when >= start and (end is None or when <= end):
                return WpsReply(float(placement["lat"]),
                                float(placement["lon"]),
                                rec.get("accuracy_m"))
        return WpsReply(SENTINEL_LAT, SENTINEL_LON)


class RecordingWps:
    """Logs every reply keyed by (bssid, day) for later replay."""

    def __init__(self, inner: WpsClient, log_path: str | Path):
        self.inner = inner
        self.log_path = Path(log_path)

    def query(self, bssid: MacAddress, when: datetime) -> WpsReply:
        reply = self.inner.query(bssid, when)
        with self.log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "bssid": bssid.canonical,
                "date": when.date().isoformat(),
                "lat": reply.lat,
                "lon": reply.lon,
                "accuracy_m": reply.accuracy_m,
            }, sort_keys=True) + "\n")
        return reply


class ReplayWps:
    """Replays a recorded log; unknown (bssid, day) raises WpsUnavailable."""

    def __init__(self, log_path: str | Path):
        self.table: dict[tuple[str, str], WpsReply] = {}
        with open(log_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                key = (rec["bssid"], rec["date"])
                self.table.setdefault(key, WpsReply(
                    rec["lat"], rec["lon"], rec.get("accuracy_m")))

    def query(self, bssid: MacAddress, when: datetime) -> WpsReply:
        key = (bssid.canonical, when.date().isoformat())
        if key not in self.table:
            raise WpsUnavailable(f"no recorded reply for {key}")
        return self.table[key]
