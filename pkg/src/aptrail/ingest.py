"""Plan execution against a marketplace client: quota, dedup, images, sold state.

The client is an interface. Two implementations ship here: a deterministic
in-memory fixture client and a record/replay adapter. An adapter for the
live eBay Browse API would implement the same three methods over HTTP with
OAuth (search -> item_summary/search, probe_filters -> the aspect refinement
facet, listing_page_text -> the view-item page body); it is deliberately not
shipped or tested, since nothing in the test suite may depend on a third
party service.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, time as dtime, timedelta, timezone
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol

from .model import (
    ImageFormat,
    ImageRef,
    Listing,
    MAX_IMAGE_PX,
    MIN_IMAGE_PX,
    SoldState,
    listing_from_record,
    listing_to_record,
    utcnow,
)
from .planner import (
    FilterOption,
    IncrementalPlan,
    QueryCall,
    QueryPlan,
    SortOrder,
)
from .store import Store, TABLE_LISTINGS

logger = logging.getLogger(__name__)

SOLD_PHRASE = "This listing sold"
IMAGE_URL_TEMPLATE = "https://i.ebayimg.com/images/g/{image_id}/s-l{size}.{ext}"
DEFAULT_DAILY_QUOTA = 5000
RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY_S = 1.0


class ClientError(Exception):
    """A marketplace call failed; may succeed on retry."""


class BadSize(ValueError):
    """Requested image size is outside the CDN's supported range."""


class FetchError(Exception):
    """One image download failed."""


class ReplayMiss(Exception):
    """Replay log holds no response for the requested call."""


class QuotaExhausted(Exception):
    """Daily call budget ran out mid-plan.

    Carries the index of the first unexecuted call so the plan can resume
    on the next quota window, plus the report for the calls that did run.
    """

    def __init__(self, cursor: int, report: "IngestReport"):
        super().__init__(f"daily quota exhausted at call index {cursor}")
        self.cursor = cursor
        self.report = report


@dataclass(frozen=True)
class SearchPage:
    total_count: int
    listings: tuple[Listing, ...]


class MarketplaceClient(Protocol):
    def search(self, call: QueryCall) -> SearchPage: ...

    def probe_filters(self, query_text: str) -> list[FilterOption]: ...

    def listing_page_text(self, listing_id: str) -> Optional[str]: ...


class QuotaState:
    """Thread-safe daily call budget; the window rolls at UTC midnight."""

    def __init__(self, daily_limit: int = DEFAULT_DAILY_QUOTA,
                 clock: Callable[[], datetime] = utcnow):
        if daily_limit < 1:
            raise ValueError("daily_limit must be >= 1")
        self.daily_limit = daily_limit
        self.calls_today = 0
        self._clock = clock
        self.window_start: date = clock().date()
        self._lock = threading.Lock()

    def _roll(self) -> None:
        today = self._clock().date()
        if today != self.window_start:
            self.window_start = today
            self.calls_today = 0

    def try_consume(self, units: int = 1) -> bool:
        with self._lock:
            self._roll()
            if self.calls_today + units > self.daily_limit:
                return False
            self.calls_today += units
            return True

    def remaining(self) -> int:
        with self._lock:
            self._roll()
            return self.daily_limit - self.calls_today


@dataclass(frozen=True)
class Schedule:
    """When each marketplace group gets polled.

    Full enumerations run full_runs_per_day times, evenly spaced;
    incremental sweeps run every incremental_interval_hours in between.
    Groups are staggered so their full runs do not land on the same hour.
    """

    full_runs_per_day: int = 2
    incremental_interval_hours: int = 3
    marketplace_groups: tuple[tuple[str, ...], ...] = (("US",),)

    def __post_init__(self):
        if self.full_runs_per_day < 1:
            raise ValueError("full_runs_per_day must be >= 1")
        if self.incremental_interval_hours < 1:
            raise ValueError("incremental_interval_hours must be >= 1")
        if not self.marketplace_groups:
            raise ValueError("need at least one marketplace group")

    def events_for_day(self, day: date) -> list["ScheduledRun"]:
        spacing_h = 24.0 / self.full_runs_per_day
        stagger_h = spacing_h / len(self.marketplace_groups)
        events: list[ScheduledRun] = []
        for gi, group in enumerate(self.marketplace_groups):
            full_hours = {gi * stagger_h + k * spacing_h
                          for k in range(self.full_runs_per_day)}
            for h in sorted(full_hours):
                events.append(ScheduledRun(_at(day, h), "full", group))
            h = 0.0
            while h < 24.0:
                if h not in full_hours:
                    events.append(ScheduledRun(_at(day, h), "incremental", group))
                h += self.incremental_interval_hours
        events.sort(key=lambda e: (e.at, e.kind, e.marketplaces))
        return events


@dataclass(frozen=True)
class ScheduledRun:
    at: datetime
    kind: str
    marketplaces: tuple[str, ...]


def _at(day: date, hour: float) -> datetime:
    base = datetime.combine(day, dtime(0), tzinfo=timezone.utc)
    return base + timedelta(hours=hour)


@dataclass
class IngestReport:
    new: int = 0
    duplicate: int = 0
    failed: int = 0
    calls_used: int = 0
    probe_options: dict[str, list[FilterOption]] = field(default_factory=dict)
    halted_reason: Optional[str] = None

    def __add__(self, other: "IngestReport") -> "IngestReport":
        merged = dict(self.probe_options)
        merged.update(other.probe_options)
        return IngestReport(
            new=self.new + other.new,
            duplicate=self.duplicate + other.duplicate,
            failed=self.failed + other.failed,
            calls_used=self.calls_used + other.calls_used,
            probe_options=merged,
            halted_reason=other.halted_reason or self.halted_reason,
        )


def _store_listing(store: Store, listing: Listing, report: IngestReport) -> None:
    key = (listing.listing_id,)
    if store.exists(TABLE_LISTINGS, key):
        report.duplicate += 1
        return
    store.put(TABLE_LISTINGS, key, listing_to_record(listing))
    report.new += 1


def _call_with_retries(fn, sleep: Callable[[float], None]):
    delay = RETRY_BASE_DELAY_S
    for attempt in range(1, RETRY_ATTEMPTS + 1):
        try:
            return fn()
        except ClientError as exc:
            if attempt == RETRY_ATTEMPTS:
                raise
            logger.warning("call failed (attempt %d/%d): %s",
                           attempt, RETRY_ATTEMPTS, exc)
            sleep(delay)
            delay *= 2


def execute_plan(plan: QueryPlan,
                 client: MarketplaceClient,
                 quota: QuotaState,
                 store: Store,
                 start_at: int = 0,
                 sleep: Callable[[float], None] = time.sleep) -> IngestReport:
    """Run every call in the plan, storing listings keyed by listing_id.

    Each call, probe or page, costs one quota unit. A call that keeps
    failing after bounded retries is counted failed and the plan moves on.
    Quota exhaustion suspends the plan with a resumable cursor.
    """
    report = IngestReport()
    for idx in range(start_at, len(plan.calls)):
        call = plan.calls[idx]
        if not quota.try_consume():
            raise QuotaExhausted(idx, report)
        report.calls_used += 1
        try:
            if call.is_probe:
                options = _call_with_retries(
                    lambda: client.probe_filters(call.query_text), sleep)
                report.probe_options[call.query_text] = options
            else:
                page = _call_with_retries(lambda: client.search(call), sleep)
                for listing in page.listings:
                    _store_listing(store, listing, report)
        except ClientError as exc:
            logger.error("call %d permanently failed: %s", idx, exc)
            report.failed += 1
    return report


def run_incremental(plan: IncrementalPlan,
                    client: MarketplaceClient,
                    quota: QuotaState,
                    store: Store,
                    sleep: Callable[[float], None] = time.sleep) -> IngestReport:
    """Walk newest-first pages, stopping once the stored region is reached.

    A listing at or older than last_stored_ts marks the boundary: the page
    containing it is the last one requested. Listings with no timestamp are
    treated as already-seen so a malformed feed cannot cause a full crawl.
    """
    report = IngestReport()
    for page_no in range(plan.max_pages):
        call = plan.call_for_page(page_no)
        if not quota.try_consume():
            raise QuotaExhausted(page_no, report)
        report.calls_used += 1
        try:
            page = _call_with_retries(lambda: client.search(call), sleep)
        except ClientError as exc:
            logger.error("incremental page %d failed: %s", page_no, exc)
            report.failed += 1
            report.halted_reason = "client_error"
            return report
        hit_stored = False
        for listing in page.listings:
            if listing.listed_at is None or listing.listed_at <= plan.last_stored_ts:
                hit_stored = True
                continue
            _store_listing(store, listing, report)
        if hit_stored:
            report.halted_reason = "reached_stored"
            return report
        if len(page.listings) < call.page_size:
            report.halted_reason = "short_page"
            return report
    report.halted_reason = "cap"
    return report


def image_url(image_id: str, size_px: int, format: ImageFormat) -> str:
    if not MIN_IMAGE_PX <= size_px <= MAX_IMAGE_PX:
        raise BadSize(
            f"size {size_px} outside [{MIN_IMAGE_PX}, {MAX_IMAGE_PX}]")
    return IMAGE_URL_TEMPLATE.format(
        image_id=image_id, size=size_px, ext=format.extension)


def fetch_images(listing: Listing,
                 fetcher: Callable[[str], bytes],
                 dest_dir: str | Path,
                 errors: Optional[list] = None) -> tuple[ImageRef, ...]:
    """Download every image of a listing to dest_dir.

    Files are named <listing_id>_<image_id>.<ext>. An existing non-empty
    file is trusted and skipped, making repeat calls free. One failed URL
    is recorded (as (image_id, error) when a list is passed) and does not
    abort the rest.
    """
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    updated: list[ImageRef] = []
    for ref in listing.image_refs:
        ext = ref.format.extension
        path = dest / f"{listing.listing_id}_{ref.image_id}.{ext}"
        if path.exists() and path.stat().st_size > 0:
            updated.append(ImageRef(
                image_id=ref.image_id,
                requested_size_px=ref.requested_size_px,
                format=ref.format,
                local_path=str(path),
                fetched_at=ref.fetched_at or utcnow(),
            ))
            continue
        url = image_url(ref.image_id, ref.requested_size_px, ref.format)
        try:
            data = fetcher(url)
        except FetchError as exc:
            logger.error("fetch failed for %s: %s", url, exc)
            if errors is not None:
                errors.append((ref.image_id, exc))
            updated.append(ref)
            continue
        path.write_bytes(data)
        updated.append(ImageRef(
            image_id=ref.image_id,
            requested_size_px=ref.requested_size_px,
            format=ref.format,
            local_path=str(path),
            fetched_at=utcnow(),
        ))
    return tuple(updated)


def detect_sold(listing_page_text: Optional[str]) -> SoldState:
    """Sold iff the exact phrase appears; a vanished page is unknowable."""
    if listing_page_text is None:
        return SoldState.UNKNOWN
    if SOLD_PHRASE in listing_page_text:
        return SoldState.SOLD
    return SoldState.NOT_SOLD


_ADVANCED_QUERY_RE = re.compile(r"^(.*?)\s+\((.*)\)\s+-\((.*)\)$")


def _query_matches(query_text: str, title: str) -> bool:
    """Fixture-side semantics of the marketplace query language.

    Advanced form "HEAD (a,b,c) -(x,y)": head term present, at least one
    inclusion term present, no exclusion term present. Plain form: every
    word present. Matching is case-insensitive on the title.
    """
    hay = title.lower()
    m = _ADVANCED_QUERY_RE.match(query_text)
    if m:
        head, inc, exc = m.groups()
        if head.lower() not in hay:
            return False
        if not any(t.strip().lower() in hay for t in inc.split(",") if t.strip()):
            return False
        if any(t.strip().lower() in hay for t in exc.split(",") if t.strip()):
            return False
        return True
    return all(w in hay for w in query_text.lower().split())


class FixtureMarketplaceClient:
    """Deterministic marketplace built from line-delimited listing records.

    Record schema (one JSON object per line):
      listing_id, marketplace_id, title, brand, condition_label,
      condition_text, country, city, postal_prefix, listed_at,
      image_ids: [..], sold: bool, removed: bool

    The results cap mirrors the live API: matches beyond the cap exist in
    total_count but cannot be paged to.
    """

    def __init__(self, records: Iterable[dict], results_cap: int = 10_000):
        self.records = list(records)
        self.results_cap = results_cap
        self.search_calls = 0
        self.probe_calls = 0
        seen = Counter(r["listing_id"] for r in self.records)
        dupes = [k for k, n in seen.items() if n > 1]
        if dupes:
            raise ValueError(f"fixture has duplicate listing ids: {dupes[:3]}")

    @classmethod
    def from_path(cls, path: str | Path, results_cap: int = 10_000
                  ) -> "FixtureMarketplaceClient":
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return cls(records, results_cap)

    def _matches(self, call_query: str, filter_group: tuple[str, ...]
                 ) -> list[dict]:
        out = []
        for rec in self.records:
            if filter_group and rec.get("brand") not in filter_group:
                continue
            if _query_matches(call_query, rec.get("title", "")):
                out.append(rec)
        return out

    def search(self, call: QueryCall) -> SearchPage:
        self.search_calls += 1
        matches = self._matches(call.query_text, call.filter_group)
        if call.sort is SortOrder.NEWLY_LISTED:
            matches.sort(key=lambda r: (r.get("listed_at") or "",
                                        r["listing_id"]))
            matches.reverse()
        else:
            matches.sort(key=lambda r: r["listing_id"])
        reachable = matches[: self.results_cap]
        page = reachable[call.page_offset: call.page_offset + call.page_size]
        return SearchPage(
            total_count=len(matches),
            listings=tuple(self._to_listing(r) for r in page),
        )

    def probe_filters(self, query_text: str) -> list[FilterOption]:
        self.probe_calls += 1
        counts = Counter(r.get("brand", "") for r in self._matches(query_text, ()))
        return [FilterOption(name, n)
                for name, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
                if name]

    def listing_page_text(self, listing_id: str) -> Optional[str]:
        for rec in self.records:
            if rec["listing_id"] == listing_id:
                if rec.get("removed"):
                    return None
                body = f"<html><body><h1>{rec.get('title', '')}</h1>"
                if rec.get("sold"):
                    body += f"<p>{SOLD_PHRASE}</p>"
                return body + "</body></html>"
        return None

    @staticmethod
    def _to_listing(rec: dict) -> Listing:
        base = {k: v for k, v in rec.items()
                if k in {"listing_id", "marketplace_id", "title",
                         "condition_label", "condition_text", "country",
                         "city", "postal_prefix", "listed_at"}}
        base["image_refs"] = [{"image_id": i} for i in rec.get("image_ids", ())]
        return listing_from_record(base)


class RecordingClient:
    """Wraps a client and logs every call/response pair for later replay."""

    def __init__(self, inner: MarketplaceClient, log_path: str | Path):
        self.inner = inner
        self.log_path = Path(log_path)

    def _log(self, op: str, request, response) -> None:
        with self.log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(
                {"op": op, "request": request, "response": response},
                sort_keys=True) + "\n")

    def search(self, call: QueryCall) -> SearchPage:
        page = self.inner.search(call)
        self._log("search", call.to_record(), {
            "total_count": page.total_count,
            "listings": [listing_to_record(l) for l in page.listings],
        })
        return page

    def probe_filters(self, query_text: str) -> list[FilterOption]:
        options = self.inner.probe_filters(query_text)
        self._log("probe_filters", query_text,
                  [[o.name, o.estimated_count] for o in options])
        return options

    def listing_page_text(self, listing_id: str) -> Optional[str]:
        text = self.inner.listing_page_text(listing_id)
        self._log("listing_page_text", listing_id, text)
        return text


class ReplayClient:
    """Serves recorded responses; identical repeat requests replay in order."""

    def __init__(self, log_path: str | Path):
        self._entries: list[dict] = []
        with open(log_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self._entries.append(json.loads(line))

    def _take(self, op: str, request):
        for i, entry in enumerate(self._entries):
            if entry["op"] == op and entry["request"] == request:
                return self._entries.pop(i)["response"]
        raise ReplayMiss(f"no recorded response for {op} {request!r}")

    def search(self, call: QueryCall) -> SearchPage:
        resp = self._take("search", call.to_record())
        return SearchPage(
            total_count=resp["total_count"],
            listings=tuple(listing_from_record(r) for r in resp["listings"]),
        )

    def probe_filters(self, query_text: str) -> list[FilterOption]:
        resp = self._take("probe_filters", query_text)
        return [FilterOption(name, count) for name, count in resp]

    def listing_page_text(self, listing_id: str) -> Optional[str]:
        return self._take("listing_page_text", listing_id)
