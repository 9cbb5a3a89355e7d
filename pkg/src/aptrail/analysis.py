"""Corpus analyses: movement, postal validation, exposure, mislabeling,
sensitive-location overlap, and MAC-to-model band inference.

Everything here is a pure function over immutable inputs; callers join
listings to timelines and filter (e.g. to sold auctions) before calling.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Optional, Protocol, Sequence

from .geolocate import BssidTimeline, Category, GeoObservation
from .model import ConditionLabel, Listing, MacAddress

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
STATIONARY_THRESHOLD_KM = 1.0
BAND_GAP = 512


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance between (lat, lon) pairs in degrees."""
    for lat, lon in (a, b):
        if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
            raise ValueError(f"coordinates out of range: ({lat}, {lon})")
    lat1, lon1, lat2, lon2 = map(math.radians, (*a, *b))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = (math.sin(dlat / 2.0) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def _cdf(values: Sequence[float]) -> list[tuple[float, float]]:
    if not values:
        return []
    ordered = sorted(values)
    n = len(ordered)
    out = []
    for i, v in enumerate(ordered, start=1):
        if i == n or ordered[i] != v:
            out.append((v, i / n))
    return out


@dataclass
class MovementReport:
    distances_km: list[tuple[str, float]]
    stationary: int
    moved: int
    threshold_km: float
    cdf: list[tuple[float, float]]
    log_x: bool = True

    @property
    def stationary_fraction(self) -> float:
        total = self.stationary + self.moved
        return self.stationary / total if total else 0.0


def movement_report(timelines: Iterable[BssidTimeline],
                    stationary_km: float = STATIONARY_THRESHOLD_KM
                    ) -> MovementReport:
    """First-to-last displacement per BSSID.

    Callers pass the Both-category (and usually sold-only) population;
    every timeline must hold at least two observations.
    """
    distances: list[tuple[str, float]] = []
    stationary = moved = 0
    for tl in timelines:
        if len(tl.observations) < 2:
            raise ValueError(
                f"timeline {tl.bssid} has fewer than 2 observations")
        first, last = tl.observations[0], tl.observations[-1]
        km = haversine_km((first.lat, first.lon), (last.lat, last.lon))
        distances.append((tl.bssid.canonical, km))
        if km < stationary_km:
            stationary += 1
        else:
            moved += 1
    return MovementReport(
        distances_km=distances,
        stationary=stationary,
        moved=moved,
        threshold_km=stationary_km,
        cdf=_cdf([km for _, km in distances]),
    )


class PostalOutcome(str, enum.Enum):
    MATCH3 = "match3"
    MATCH2 = "match2"
    MISMATCH = "mismatch"
    UNRESOLVABLE = "unresolvable"


class ResolverError(Exception):
    """Reverse postal resolution failed; treated as unresolvable."""


class PostalResolver(Protocol):
    def resolve(self, lat: float, lon: float
                ) -> Optional[tuple[str, str]]: ...


class FixturePostalResolver:
    """Table-backed (lat, lon) -> (country, postal), keyed at 4 decimals.

    Record lines: {"lat": .., "lon": .., "country": "US", "postal": "20740"}.
    """

    def __init__(self, records: Iterable[dict]):
        self.table: dict[tuple[float, float], tuple[str, str]] = {}
        for rec in records:
            key = (round(float(rec["lat"]), 4), round(float(rec["lon"]), 4))
            self.table.setdefault(key, (rec["country"], rec["postal"]))

    @classmethod
    def from_path(cls, path: str | Path) -> "FixturePostalResolver":
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return cls(records)

    def resolve(self, lat: float, lon: float) -> Optional[tuple[str, str]]:
        return self.table.get((round(lat, 4), round(lon, 4)))


def reference_observation(timeline: BssidTimeline,
                          side: str) -> Optional[GeoObservation]:
    """seller: last observation at or before the auction moment (ties are
    before, as in categorize); buyer: first strictly after."""
    if side == "seller":
        pre = [o for o in timeline.observations
               if o.observed_at <= timeline.auction_ts]
        return pre[-1] if pre else None
    if side == "buyer":
        post = [o for o in timeline.observations
                if o.observed_at > timeline.auction_ts]
        return post[0] if post else None
    raise ValueError(f"side must be seller or buyer, got {side!r}")


def postal_match(timeline: BssidTimeline, listing: Listing,
                 resolver: PostalResolver, side: str = "seller"
                 ) -> PostalOutcome:
    """Compare a resolved postal code against the seller's listed prefix.

    The listing's prefix is the only comparison target either way; side
    picks which observation stands in for the device's location.
    """
    ref = reference_observation(timeline, side)
    prefix = listing.seller_location.postal_prefix
    country = listing.seller_location.country
    if ref is None or not prefix or not country:
        return PostalOutcome.UNRESOLVABLE
    try:
        resolved = resolver.resolve(ref.lat, ref.lon)
    except ResolverError:
        return PostalOutcome.UNRESOLVABLE
    if resolved is None:
        return PostalOutcome.UNRESOLVABLE
    res_country, res_postal = resolved
    if res_country != country:
        return PostalOutcome.UNRESOLVABLE
    if country == "US":
        if res_postal[:3] == prefix:
            return PostalOutcome.MATCH3
        if res_postal[:2] == prefix[:2]:
            return PostalOutcome.MATCH2
        return PostalOutcome.MISMATCH
    if country == "GB" or country == "UK":
        outward = res_postal.split()[0].upper() if res_postal else ""
        if outward and outward == prefix.split()[0].upper():
            return PostalOutcome.MATCH3
        return PostalOutcome.MISMATCH
    # other countries: plain prefix comparison on the resolved code
    if res_postal.upper().startswith(prefix.upper()):
        return PostalOutcome.MATCH3
    return PostalOutcome.MISMATCH


@dataclass
class MatchCounts:
    match3: int = 0
    match2: int = 0
    mismatch: int = 0
    unresolvable: int = 0

    def add(self, outcome: PostalOutcome) -> None:
        if outcome is PostalOutcome.MATCH3:
            self.match3 += 1
        elif outcome is PostalOutcome.MATCH2:
            self.match2 += 1
        elif outcome is PostalOutcome.MISMATCH:
            self.mismatch += 1
        else:
            self.unresolvable += 1

    @property
    def comparable(self) -> int:
        return self.match3 + self.match2 + self.mismatch

    @property
    def match3_rate(self) -> float:
        return self.match3 / self.comparable if self.comparable else 0.0

    @property
    def match2_rate(self) -> float:
        """Cumulative: two leading digits agree, three included."""
        if not self.comparable:
            return 0.0
        return (self.match3 + self.match2) / self.comparable


@dataclass
class ExposureSummary:
    category_counts: dict[Category, int]
    # (category, side) -> per-country match tallies
    matches: dict[tuple[Category, str], dict[str, MatchCounts]]

    @property
    def total(self) -> int:
        return sum(self.category_counts.values())

    def rate(self, category: Category, side: str, country: str) -> float:
        counts = self.matches.get((category, side), {}).get(country)
        return counts.match3_rate if counts else 0.0

    def to_records(self) -> list[dict]:
        rows = []
        for category in Category:
            rows.append({"row": "population", "category": category.value,
                         "count": self.category_counts.get(category, 0)})
        for (category, side), per_country in sorted(
                self.matches.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
            for country, mc in sorted(per_country.items()):
                rows.append({
                    "row": "postal_match",
                    "category": category.value,
                    "side": side,
                    "country": country,
                    "match3": mc.match3,
                    "match2": mc.match2,
                    "mismatch": mc.mismatch,
                    "unresolvable": mc.unresolvable,
                    "comparable": mc.comparable,
                    "match3_rate": mc.match3_rate,
                    "match2_rate": mc.match2_rate,
                })
        return rows


_SIDES_BY_CATEGORY = {
    Category.PRE_ONLY: ("seller",),
    Category.POST_ONLY: ("buyer",),
    Category.BOTH: ("seller", "buyer"),
    Category.NEVER: (),
}


def exposure_summary(timelines: Iterable[BssidTimeline],
                     listings: dict[str, Listing],
                     resolver: PostalResolver) -> ExposureSummary:
    """Category tabulation with per-country postal match rates.

    listings maps bssid canonical text to its auction listing. Seller-side
    rates use the last pre-auction observation, buyer-side the first
    post-auction one; both compare against the seller's listed prefix.
    """
    category_counts: dict[Category, int] = {c: 0 for c in Category}
    matches: dict[tuple[Category, str], dict[str, MatchCounts]] = {}
    for tl in timelines:
        category = tl.category or Category.NEVER
        category_counts[category] += 1
        listing = listings.get(tl.bssid.canonical)
        if listing is None:
            continue
        for side in _SIDES_BY_CATEGORY[category]:
            outcome = postal_match(tl, listing, resolver, side=side)
            country = listing.seller_location.country or "?"
            per_country = matches.setdefault((category, side), {})
            per_country.setdefault(country, MatchCounts()).add(outcome)
    return ExposureSummary(category_counts=category_counts, matches=matches)


@dataclass
class ConditionFlag:
    listing_id: str
    condition_label: ConditionLabel
    earliest_pre_observation: GeoObservation


@dataclass
class ConditionMismatchReport:
    flagged: list[ConditionFlag]
    population: int

    @property
    def flagged_count(self) -> int:
        return len(self.flagged)

    @property
    def flagged_share(self) -> float:
        return len(self.flagged) / self.population if self.population else 0.0

    @property
    def open_box_share(self) -> float:
        if not self.flagged:
            return 0.0
        ob = sum(1 for f in self.flagged
                 if f.condition_label is ConditionLabel.OPEN_BOX)
        return ob / len(self.flagged)


_UNUSED_CLAIMS = (ConditionLabel.NEW, ConditionLabel.OPEN_BOX)


def condition_mismatch(
        items: Iterable[tuple[Listing, Iterable[BssidTimeline]]]
) -> ConditionMismatchReport:
    """Listings sold as new or open box whose radio was seen before listing.

    A pre-auction observation (ties count as before) contradicts the
    never-used claim; the open-box share contextualizes the flags.
    """
    flagged = []
    population = 0
    for listing, timelines in items:
        population += 1
        if listing.condition_label not in _UNUSED_CLAIMS:
            continue
        pre_obs = [o for tl in timelines for o in tl.observations
                   if o.observed_at <= tl.auction_ts]
        if pre_obs:
            pre_obs.sort(key=lambda o: o.observed_at)
            flagged.append(ConditionFlag(
                listing_id=listing.listing_id,
                condition_label=listing.condition_label,
                earliest_pre_observation=pre_obs[0],
            ))
    return ConditionMismatchReport(flagged=flagged, population=population)


class RegionParse(ValueError):
    """A sensitive-region ring failed validation."""


@dataclass(frozen=True)
class SensitiveRegion:
    name: str
    polygon: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ring = self.polygon
        if len(ring) >= 2 and ring[0] == ring[-1]:
            ring = ring[:-1]
            object.__setattr__(self, "polygon", ring)
        if len(ring) < 3:
            raise RegionParse(f"{self.name}: ring needs >= 3 vertices")
        if len(set(ring)) != len(ring):
            raise RegionParse(f"{self.name}: repeated vertex")
        n = len(ring)
        for i in range(n):
            a1, a2 = ring[i], ring[(i + 1) % n]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                b1, b2 = ring[j], ring[(j + 1) % n]
                if _segments_intersect(a1, a2, b1, b2):
                    raise RegionParse(
                        f"{self.name}: edges {i} and {j} intersect")


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _on_segment(a, b, p) -> bool:
    if abs(_cross(a, b, p)) > 1e-12:
        return False
    return (min(a[0], b[0]) - 1e-12 <= p[0] <= max(a[0], b[0]) + 1e-12
            and min(a[1], b[1]) - 1e-12 <= p[1] <= max(a[1], b[1]) + 1e-12)


def _segments_intersect(p1, p2, p3, p4) -> bool:
    d1 = _cross(p3, p4, p1)
    d2 = _cross(p3, p4, p2)
    d3 = _cross(p1, p2, p3)
    d4 = _cross(p1, p2, p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) \
            and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    for seg, p in (((p3, p4), p1), ((p3, p4), p2),
                   ((p1, p2), p3), ((p1, p2), p4)):
        if _on_segment(seg[0], seg[1], p):
            return True
    return False


def point_in_polygon(lat: float, lon: float,
                     polygon: Sequence[tuple[float, float]]) -> bool:
    """Even-odd ray cast over (lat, lon) vertices; boundary is inside."""
    n = len(polygon)
    for i in range(n):
        if _on_segment(polygon[i], polygon[(i + 1) % n], (lat, lon)):
            return True
    inside = False
    j = n - 1
    for i in range(n):
        yi, xi = polygon[i]
        yj, xj = polygon[j]
        if (yi > lat) != (yj > lat):
            x_cross = xi + (lat - yi) * (xj - xi) / (yj - yi)
            if lon < x_cross:
                inside = not inside
        j = i
    return inside


def load_regions(source: IO[str] | str | Path) -> list[SensitiveRegion]:
    """Ring-list lines: {"name": "...", "polygon": [[lat, lon], ...]}."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    regions = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        regions.append(SensitiveRegion(
            name=rec["name"],
            polygon=tuple((float(p[0]), float(p[1]))
                          for p in rec["polygon"]),
        ))
    if not regions:
        raise RegionParse("region source holds no rings")
    return regions


@dataclass(frozen=True)
class SensitiveHit:
    bssid: str
    region: str
    observed_at_pre: bool
    lat: float
    lon: float


def sensitive_hits(timelines: Iterable[BssidTimeline],
                   regions: Sequence[SensitiveRegion]) -> list[SensitiveHit]:
    """Observations falling inside any region, split pre/post auction.

    One hit per (bssid, region, side): repeat sightings of the same radio
    in the same place do not inflate the count.
    """
    seen: dict[tuple[str, str, bool], SensitiveHit] = {}
    for tl in timelines:
        for obs in tl.observations:
            for region in regions:
                if point_in_polygon(obs.lat, obs.lon, region.polygon):
                    pre = obs.observed_at <= tl.auction_ts
                    key = (tl.bssid.canonical, region.name, pre)
                    seen.setdefault(key, SensitiveHit(
                        bssid=tl.bssid.canonical,
                        region=region.name,
                        observed_at_pre=pre,
                        lat=obs.lat,
                        lon=obs.lon,
                    ))
    return list(seen.values())


@dataclass(frozen=True)
class BandInterval:
    lo: int
    hi: int
    support: int

    def contains(self, value: int) -> bool:
        return self.lo <= value <= self.hi


@dataclass
class ModelBandIndex:
    gap: int
    bands: dict[tuple[str, str], tuple[BandInterval, ...]] = field(
        default_factory=dict)

    def labels_for_oui(self, oui: str) -> list[str]:
        return sorted({label for o, label in self.bands if o == oui})


def mac_band_value(mac: MacAddress) -> int:
    """The 16-bit integer formed by the fourth and fifth bytes."""
    octets = mac.octets
    return (octets[3] << 8) | octets[4]


def build_model_bands(labeled: Sequence[tuple[MacAddress, str]],
                      gap: int = BAND_GAP) -> ModelBandIndex:
    """Coalesce each model's sorted 16-bit values into supported intervals.

    Values within `gap` of the interval's running end extend it; a larger
    jump starts a new interval.
    """
    if not labeled:
        raise ValueError("need at least one labeled address")
    grouped: dict[tuple[str, str], list[int]] = {}
    for mac, label in labeled:
        grouped.setdefault((mac.oui(), label), []).append(mac_band_value(mac))
    index = ModelBandIndex(gap=gap)
    for key, values in grouped.items():
        values.sort()
        intervals: list[BandInterval] = []
        lo = hi = values[0]
        support = 1
        for v in values[1:]:
            if v - hi <= gap:
                hi = v
                support += 1
            else:
                intervals.append(BandInterval(lo, hi, support))
                lo = hi = v
                support = 1
        intervals.append(BandInterval(lo, hi, support))
        index.bands[key] = tuple(intervals)
    return index


def infer_model(mac: MacAddress, index: ModelBandIndex) -> list[str]:
    """Models whose band contains the address, best-supported first."""
    value = mac_band_value(mac)
    oui = mac.oui()
    hits: list[tuple[int, str]] = []
    for (band_oui, label), intervals in index.bands.items():
        if band_oui != oui:
            continue
        for interval in intervals:
            if interval.contains(value):
                hits.append((interval.support, label))
                break
    hits.sort(key=lambda h: (-h[0], h[1]))
    return [label for _support, label in hits]


def scatter_triples(labeled: Sequence[tuple[MacAddress, str]]
                    ) -> list[tuple[int, int, str]]:
    """(byte4, byte5, model) rows for banding plots."""
    out = []
    for mac, label in labeled:
        octets = mac.octets
        out.append((octets[3], octets[4], label))
    return out


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            count += 1
    return count


def write_csv(path: str | Path, header: Sequence[str],
              rows: Iterable[Sequence]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
            count += 1
    return count
