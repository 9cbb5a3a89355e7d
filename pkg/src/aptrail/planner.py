"""Query planning: exhaustive enumeration past the paginated results cap.

A capped search API can still be enumerated exhaustively by partitioning
results into mutually exclusive filter groups whose member counts each fit
under the cap, then paginating every group. Planning is pure; execution
lives in the ingest module.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import IO, Iterable, Optional

DEFAULT_RESULTS_CAP = 10_000
DEFAULT_PAGE_SIZE = 200
MAX_PAGE_SIZE = 200

GENERAL_QUERIES = ("wifi router", "wifi access point")
INCLUSION_TERMS = ("ap", "access point", "router", "radio", "wifi", "wireless", "mesh")
EXCLUSION_TERMS = ("car", "carplay", "mouse", "phone", "gb")


class SortOrder(str, Enum):
    BEST_MATCH = "best_match"
    NEWLY_LISTED = "newly_listed"


@dataclass(frozen=True)
class FilterOption:
    name: str
    estimated_count: int

    def __post_init__(self):
        if self.estimated_count < 0:
            raise ValueError("estimated_count must be non-negative")


@dataclass(frozen=True)
class FilterGroup:
    options: tuple[str, ...]
    total_count: int


@dataclass(frozen=True)
class QueryCall:
    query_text: str
    filter_group: tuple[str, ...] = ()
    sort: SortOrder = SortOrder.BEST_MATCH
    page_offset: int = 0
    page_size: int = DEFAULT_PAGE_SIZE
    is_probe: bool = False

    def __post_init__(self):
        if not 1 <= self.page_size <= MAX_PAGE_SIZE:
            raise ValueError(f"page_size {self.page_size} outside [1, {MAX_PAGE_SIZE}]")
        if self.page_offset < 0:
            raise ValueError("page_offset must be >= 0")

    def to_record(self) -> dict:
        return {
            "query_text": self.query_text,
            "filter_group": list(self.filter_group),
            "sort": self.sort.value,
            "page_offset": self.page_offset,
            "page_size": self.page_size,
            "is_probe": self.is_probe,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "QueryCall":
        return cls(
            query_text=rec["query_text"],
            filter_group=tuple(rec.get("filter_group", ())),
            sort=SortOrder(rec.get("sort", "best_match")),
            page_offset=rec.get("page_offset", 0),
            page_size=rec.get("page_size", DEFAULT_PAGE_SIZE),
            is_probe=rec.get("is_probe", False),
        )


@dataclass(frozen=True)
class QueryPlan:
    calls: tuple[QueryCall, ...]
    non_exhaustive_groups: tuple[str, ...] = ()

    @property
    def estimated_cost(self) -> int:
        return len(self.calls)

    def dump(self, stream: IO[str]) -> None:
        """One call per line, for audit and replay."""
        for call in self.calls:
            stream.write(json.dumps(call.to_record(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, stream: IO[str],
             non_exhaustive: Iterable[str] = ()) -> "QueryPlan":
        calls = tuple(QueryCall.from_record(json.loads(line))
                      for line in stream if line.strip())
        return cls(calls, tuple(non_exhaustive))


def pack_filters(options: Iterable[FilterOption],
                 cap: int) -> tuple[list[FilterGroup], list[str]]:
    """Group filter options first-fit-decreasing so each group fits the cap.

    An option whose own count exceeds the cap becomes a singleton group and
    is reported as non-exhaustive: its tail past the cap is unreachable
    through pagination alone.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    non_exhaustive: list[str] = []
    bins: list[list[FilterOption]] = []
    for opt in sorted(options, key=lambda o: -o.estimated_count):
        if opt.estimated_count > cap:
            bins.append([opt])
            non_exhaustive.append(opt.name)
            continue
        for b in bins:
            total = sum(o.estimated_count for o in b)
            if b[0].name not in non_exhaustive and total + opt.estimated_count <= cap:
                b.append(opt)
                break
        else:
            bins.append([opt])
    groups = [
        FilterGroup(tuple(o.name for o in b), sum(o.estimated_count for o in b))
        for b in bins
    ]
    return groups, non_exhaustive


def build_exhaustive_plan(query_text: str,
                          groups: Iterable[FilterGroup],
                          cap: int = DEFAULT_RESULTS_CAP,
                          page_size: int = DEFAULT_PAGE_SIZE) -> QueryPlan:
    """Probe plus full pagination of every filter group, capped per group."""
    if not 1 <= page_size <= MAX_PAGE_SIZE:
        raise ValueError(f"page_size {page_size} outside [1, {MAX_PAGE_SIZE}]")
    if cap < page_size:
        raise ValueError("cap must be >= page_size")
    calls = [QueryCall(query_text, page_size=page_size, is_probe=True)]
    non_exhaustive = []
    for group in groups:
        reachable = min(group.total_count, cap)
        if group.total_count > cap:
            non_exhaustive.append(group.options[0])
        if reachable == 0:
            continue
        for page in range(math.ceil(reachable / page_size)):
            calls.append(QueryCall(
                query_text,
                filter_group=group.options,
                page_offset=page * page_size,
                page_size=page_size,
            ))
    return QueryPlan(tuple(calls), tuple(non_exhaustive))


@dataclass(frozen=True)
class IncrementalPlan:
    """Newly-listed pagination that halts at the already-stored region.

    No probe and no brand partitioning: the executor pulls pages sorted
    newest first and stops after the first page containing a listing at or
    older than last_stored_ts.
    """

    query_text: str
    last_stored_ts: datetime
    page_size: int = DEFAULT_PAGE_SIZE
    cap: int = DEFAULT_RESULTS_CAP

    def call_for_page(self, page: int) -> QueryCall:
        return QueryCall(
            self.query_text,
            sort=SortOrder.NEWLY_LISTED,
            page_offset=page * self.page_size,
            page_size=self.page_size,
        )

    @property
    def max_pages(self) -> int:
        return math.ceil(self.cap / self.page_size)


def build_incremental_plan(query_text: str,
                           last_stored_ts: datetime,
                           page_size: int = DEFAULT_PAGE_SIZE,
                           cap: int = DEFAULT_RESULTS_CAP) -> IncrementalPlan:
    return IncrementalPlan(query_text, last_stored_ts, page_size, cap)


@dataclass(frozen=True)
class MarketplaceQueryConfig:
    """Per-marketplace query strings; international sites supply their own
    translated general queries as plain config data."""

    marketplace_id: str = "US"
    general_queries: tuple[str, ...] = GENERAL_QUERIES
    inclusion_terms: tuple[str, ...] = INCLUSION_TERMS
    exclusion_terms: tuple[str, ...] = EXCLUSION_TERMS


def build_query_texts(marketplace: Optional[MarketplaceQueryConfig] = None,
                      brands: Iterable[str] = ()) -> list[str]:
    """The two general queries plus one advanced query per brand."""
    cfg = marketplace or MarketplaceQueryConfig()
    queries = list(cfg.general_queries)
    inc = ",".join(cfg.inclusion_terms)
    exc = ",".join(cfg.exclusion_terms)
    for brand in brands:
        queries.append(f"{brand} ({inc}) -({exc})")
    return queries
