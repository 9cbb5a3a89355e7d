"""Canonical domain types shared by every pipeline stage.

Everything here is immutable after construction and safe to share across
threads. Canonical MAC form is 12 lowercase hex characters with no
separators; all other modules trade in that form.
"""

from __future__ import annotations

import csv
import enum
import io
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Optional


class MalformedMac(ValueError):
    """Input text is not a MAC address in any supported notation."""


class RegistryParse(ValueError):
    """A prefix registry stream yielded no usable records."""


_HEX = set("0123456789abcdef")
_SEPARATORS = ":- ."

# Six octets joined by one consistent separator, or no separator at all.
_MAC_RE = re.compile(
    r"^([0-9a-f]{2})(([:\- .])[0-9a-f]{2}(?:\3[0-9a-f]{2}){4}|[0-9a-f]{10})$",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class MacAddress:
    """48-bit identifier held in canonical text form."""

    canonical: str

    def __post_init__(self):
        if len(self.canonical) != 12 or not set(self.canonical) <= _HEX:
            raise MalformedMac(f"not canonical mac text: {self.canonical!r}")

    @property
    def octets(self) -> bytes:
        return bytes.fromhex(self.canonical)

    def oui(self) -> str:
        """First three octets as 6 lowercase hex chars."""
        return self.canonical[:6]

    def nic(self) -> str:
        """Last three octets as 6 lowercase hex chars."""
        return self.canonical[6:]

    def colon_text(self) -> str:
        return ":".join(self.canonical[i : i + 2] for i in range(0, 12, 2))

    def __str__(self) -> str:
        return self.canonical


def parse_mac(text: str) -> MacAddress:
    """Parse a MAC address written with one consistent separator or none.

    Accepted separators between octets: colon, hyphen, space, dot.
    Mixed separators, wrong lengths, and non-hex characters raise
    MalformedMac.
    """
    if not isinstance(text, str):
        raise MalformedMac(f"expected text, got {type(text).__name__}")
    candidate = text.strip()
    if not _MAC_RE.match(candidate):
        raise MalformedMac(f"not a MAC address: {text!r}")
    stripped = "".join(c for c in candidate if c not in _SEPARATORS)
    return MacAddress(stripped.lower())


def format_mac(mac: MacAddress) -> str:
    """Canonical separator-free lowercase form."""
    return mac.canonical


class OuiRegistry:
    """Assigned 24-bit prefix registry used to validate extracted candidates.

    Lookup is case-insensitive and accepts separator-laden input; the
    registry itself never changes after loading.
    """

    def __init__(self, entries: dict[str, str], duplicate_count: int = 0):
        self._entries = dict(entries)
        self.duplicate_count = duplicate_count

    @staticmethod
    def _normalize(prefix: str) -> str:
        cleaned = "".join(c for c in prefix if c not in _SEPARATORS).lower()
        return cleaned

    def contains(self, prefix: str) -> bool:
        return self._normalize(prefix) in self._entries

    def organization(self, prefix: str) -> Optional[str]:
        return self._entries.get(self._normalize(prefix))

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, prefix: str) -> bool:
        return self.contains(prefix)

    def prefixes(self) -> Iterable[str]:
        return self._entries.keys()

    def without(self, prefixes: Iterable[str]) -> "OuiRegistry":
        """A copy with the given prefixes removed (for shrink experiments)."""
        drop = {self._normalize(p) for p in prefixes}
        kept = {k: v for k, v in self._entries.items() if k not in drop}
        return OuiRegistry(kept, self.duplicate_count)


class RegistryFormat(str, enum.Enum):
    IEEE_CSV = "ieee_csv"
    LINE_PAIRS = "line_pairs"


_PREFIX6_RE = re.compile(r"^[0-9a-fA-F]{6}$")


def load_oui_registry(source: IO[bytes] | IO[str] | str | Path,
                      format: RegistryFormat | str = RegistryFormat.IEEE_CSV) -> OuiRegistry:
    """Load a prefix registry from an IEEE-style CSV or two-column lines.

    ieee_csv keeps only MA-L rows (6-hex-digit assignments). line_pairs
    expects "<6 hex digits><whitespace><organization>" per line. Duplicate
    prefixes keep the first occurrence; the count of dropped duplicates is
    recorded on the registry.
    """
    fmt = RegistryFormat(format)
    text = _read_text(source)
    entries: dict[str, str] = {}
    duplicates = 0

    if fmt is RegistryFormat.IEEE_CSV:
        reader = csv.reader(io.StringIO(text))
        for row in reader:
            if len(row) < 3:
                continue
            registry, assignment, org = row[0].strip(), row[1].strip(), row[2].strip()
            if registry.upper() != "MA-L":
                continue
            if not _PREFIX6_RE.match(assignment):
                continue
            key = assignment.lower()
            if key in entries:
                duplicates += 1
                continue
            entries[key] = org
    else:
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 1)
            if len(parts) != 2 or not _PREFIX6_RE.match(parts[0]):
                continue
            key = parts[0].lower()
            if key in entries:
                duplicates += 1
                continue
            entries[key] = parts[1].strip()

    if not entries:
        raise RegistryParse("no valid registry records found")
    return OuiRegistry(entries, duplicates)


def _read_text(source: IO[bytes] | IO[str] | str | Path) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8")
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


class ConditionLabel(str, enum.Enum):
    NEW = "new"
    OPEN_BOX = "open_box"
    USED = "used"
    REFURBISHED = "refurbished"
    FOR_PARTS = "for_parts"
    OTHER = "other"


class SoldState(str, enum.Enum):
    SOLD = "sold"
    NOT_SOLD = "not_sold"
    UNKNOWN = "unknown"


class ImageFormat(str, enum.Enum):
    JPEG = "jpeg"
    PNG = "png"
    WEBP = "webp"

    @property
    def extension(self) -> str:
        return {"jpeg": "jpg", "png": "png", "webp": "webp"}[self.value]


MIN_IMAGE_PX = 32
MAX_IMAGE_PX = 2400


@dataclass(frozen=True)
class ImageRef:
    image_id: str
    requested_size_px: int = 1600
    format: ImageFormat = ImageFormat.JPEG
    local_path: Optional[str] = None
    fetched_at: Optional[datetime] = None

    def __post_init__(self):
        if not MIN_IMAGE_PX <= self.requested_size_px <= MAX_IMAGE_PX:
            raise ValueError(
                f"requested_size_px {self.requested_size_px} outside "
                f"[{MIN_IMAGE_PX}, {MAX_IMAGE_PX}]")


@dataclass(frozen=True)
class SellerLocation:
    country: str = ""
    city: str = ""
    postal_prefix: str = ""


@dataclass(frozen=True)
class Listing:
    """One marketplace listing; listing_id is unique across marketplaces."""

    listing_id: str
    marketplace_id: str = ""
    title: str = ""
    condition_label: ConditionLabel = ConditionLabel.OTHER
    condition_text: str = ""
    seller_location: SellerLocation = field(default_factory=SellerLocation)
    listed_at: Optional[datetime] = None
    image_refs: tuple[ImageRef, ...] = ()
    sold_state: SoldState = SoldState.UNKNOWN

    def __post_init__(self):
        if not self.listing_id:
            raise ValueError("listing_id must be non-empty")
        loc = self.seller_location
        if loc.country == "US" and loc.postal_prefix:
            if not re.match(r"^\d{3}$", loc.postal_prefix):
                raise ValueError(
                    f"US postal_prefix must be 3 digits, got {loc.postal_prefix!r}")


@dataclass(frozen=True)
class MacCandidate:
    """A MAC extracted from one listing image, with provenance."""

    mac: MacAddress
    raw_match: str
    listing_id: str
    image_id: str
    rotation_deg: int = 0
    segment_index: Optional[int] = None
    oui_valid: bool = False


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def parse_ts(text: str) -> datetime:
    """ISO 8601 text to an aware UTC datetime."""
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_ts(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def image_ref_to_record(ref: ImageRef) -> dict:
    return {
        "image_id": ref.image_id,
        "requested_size_px": ref.requested_size_px,
        "format": ref.format.value,
        "local_path": ref.local_path,
        "fetched_at": format_ts(ref.fetched_at) if ref.fetched_at else None,
    }


def image_ref_from_record(rec: dict) -> ImageRef:
    fetched = rec.get("fetched_at")
    return ImageRef(
        image_id=rec["image_id"],
        requested_size_px=rec.get("requested_size_px", 1600),
        format=ImageFormat(rec.get("format", "jpeg")),
        local_path=rec.get("local_path"),
        fetched_at=parse_ts(fetched) if fetched else None,
    )


def listing_to_record(listing: Listing) -> dict:
    loc = listing.seller_location
    return {
        "listing_id": listing.listing_id,
        "marketplace_id": listing.marketplace_id,
        "title": listing.title,
        "condition_label": listing.condition_label.value,
        "condition_text": listing.condition_text,
        "country": loc.country,
        "city": loc.city,
        "postal_prefix": loc.postal_prefix,
        "listed_at": format_ts(listing.listed_at) if listing.listed_at else None,
        "image_refs": [image_ref_to_record(r) for r in listing.image_refs],
        "sold_state": listing.sold_state.value,
    }


def listing_from_record(rec: dict) -> Listing:
    listed = rec.get("listed_at")
    return Listing(
        listing_id=rec["listing_id"],
        marketplace_id=rec.get("marketplace_id", ""),
        title=rec.get("title", ""),
        condition_label=ConditionLabel(rec.get("condition_label", "other")),
        condition_text=rec.get("condition_text", ""),
        seller_location=SellerLocation(
            country=rec.get("country", ""),
            city=rec.get("city", ""),
            postal_prefix=rec.get("postal_prefix", ""),
        ),
        listed_at=parse_ts(listed) if listed else None,
        image_refs=tuple(image_ref_from_record(r)
                         for r in rec.get("image_refs", ())),
        sold_state=SoldState(rec.get("sold_state", "unknown")),
    )


def candidate_to_record(cand: MacCandidate) -> dict:
    return {
        "mac": cand.mac.canonical,
        "raw_match": cand.raw_match,
        "listing_id": cand.listing_id,
        "image_id": cand.image_id,
        "rotation_deg": cand.rotation_deg,
        "segment_index": cand.segment_index,
        "oui_valid": cand.oui_valid,
    }


def candidate_from_record(rec: dict) -> MacCandidate:
    return MacCandidate(
        mac=MacAddress(rec["mac"]),
        raw_match=rec.get("raw_match", ""),
        listing_id=rec["listing_id"],
        image_id=rec["image_id"],
        rotation_deg=rec.get("rotation_deg", 0),
        segment_index=rec.get("segment_index"),
        oui_valid=rec.get("oui_valid", False),
    )
