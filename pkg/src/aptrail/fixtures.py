"""Deterministic synthetic corpus: a desk-scale marketplace, positioning
service, OCR text table, postal resolver, and vendor registry that exercise
the whole pipeline with constructed, exactly-known statistics.

Every file is a pure function of (seed, spec): integer counts are fixed by
rounding up front, so reported rates match construction exactly, and the
same seed reproduces byte-identical output.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path

from .model import format_ts, parse_mac, parse_ts

DEFAULT_BRANDS = ("Ubiquiti", "Cisco", "NETGEAR", "TP-Link", "ARRIS",
                  "Aruba")
MODEL_NAMES = ("AP-Lite", "AP-Pro", "AP-Max")
AUCTION_BASE = parse_ts("2024-03-01T00:00:00Z")
SELLER_PREFIX = "207"
MATCH_POSTAL = "20740"
MISMATCH_POSTAL = "90210"
FILLER_PREFIXES = 40

# byte-4 layer per model index; layers sit far beyond the band gap apart
_MODEL_LAYERS = (0x10, 0x50, 0x90)


class FixtureError(ValueError):
    pass


@dataclass(frozen=True)
class FixtureSpec:
    n_listings: int = 1000
    brands: tuple[str, ...] = DEFAULT_BRANDS
    mac_density: float = 0.18
    mover_fraction: float = 0.5
    match3_rate_pre: float = 0.5
    match3_rate_post: float = 0.06
    pre_only_fraction: float = 0.35
    post_only_fraction: float = 0.35
    both_fraction: float = 0.2

    def __post_init__(self):
        if self.n_listings < 1:
            raise FixtureError("n_listings must be >= 1")
        if not self.brands:
            raise FixtureError("at least one brand required")
        rates = ("mac_density", "mover_fraction", "match3_rate_pre",
                 "match3_rate_post", "pre_only_fraction",
                 "post_only_fraction", "both_fraction")
        for name in rates:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise FixtureError(f"{name} must be in [0, 1]")
        if (self.pre_only_fraction + self.post_only_fraction
                + self.both_fraction) > 1.0 + 1e-9:
            raise FixtureError("category fractions exceed 1")


def _brand_oui(index: int) -> str:
    return f"0a10{index:02x}"


def _coords(i: int) -> tuple[float, float]:
    return (round(30.0 + (i % 1000) * 0.01, 4),
            round(-100.0 + (i // 1000) * 0.25, 4))


def _mover_coords(i: int) -> tuple[float, float]:
    lat, lon = _coords(i)
    # ~9 km east: clearly past the stationary threshold, and off the
    # home-coordinate grid so resolver keys never collide
    return (lat, round(lon + 0.1, 4))


def _write_jsonl(path: Path, records) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            count += 1
    return count


def generate_fixtures(dest: str | Path, spec: FixtureSpec = FixtureSpec(),
                      seed: int = 0) -> dict:
    """Write the full fixture set under dest and return a summary."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    n = spec.n_listings

    n_mac = round(n * spec.mac_density)
    mac_rows = sorted(rng.sample(range(n), n_mac))
    mac_row_set = set(mac_rows)

    n_pre = round(n_mac * spec.pre_only_fraction)
    n_post = round(n_mac * spec.post_only_fraction)
    n_both = round(n_mac * spec.both_fraction)
    if n_pre + n_post + n_both > n_mac:
        n_both = n_mac - n_pre - n_post
    n_movers = round(n_both * spec.mover_fraction)
    n_match_pre = round(n_pre * spec.match3_rate_pre)
    n_match_post = round(n_post * spec.match3_rate_post)

    categories: dict[int, str] = {}
    for pos, row in enumerate(mac_rows):
        if pos < n_pre:
            categories[row] = "pre_only"
        elif pos < n_pre + n_post:
            categories[row] = "post_only"
        elif pos < n_pre + n_post + n_both:
            if pos - n_pre - n_post < n_movers:
                categories[row] = "both_mover"
            else:
                categories[row] = "both_stationary"
        else:
            categories[row] = "never"

    listings, ocr_map, wps_rows, resolver_rows = [], [], [], []
    bssids_by_category: dict[str, list[str]] = {
        "pre_only": [], "post_only": [], "both_mover": [],
        "both_stationary": [], "never": [],
    }
    bssid_to_listing: dict[str, str] = {}
    model_counters: dict[tuple[str, int], int] = {}
    condition_cycle = ("used", "new", "open_box", "used", "refurbished",
                       "used")
    pre_seen = post_seen = 0

    for i in range(n):
        listing_id = f"L{i:06d}"
        image_id = f"img{i:06d}"
        brand_idx = i % len(spec.brands)
        brand = spec.brands[brand_idx]
        model_idx = i % len(MODEL_NAMES)
        model = MODEL_NAMES[model_idx]
        listed_at = AUCTION_BASE + timedelta(minutes=i)
        listings.append({
            "listing_id": listing_id,
            "marketplace_id": "US",
            "title": f"{brand} {model} wifi access point",
            "brand": brand,
            "condition_label": condition_cycle[i % len(condition_cycle)],
            "condition_text": "tested and working",
            "country": "US",
            "city": "Fixtureville",
            "postal_prefix": SELLER_PREFIX,
            "listed_at": format_ts(listed_at),
            "image_ids": [image_id],
            "sold": True,
            "removed": False,
        })
        basename = f"{listing_id}_{image_id}.jpg"

        if i not in mac_row_set:
            if i % 2 == 0:
                lines = ["5V 2A power adapter"]
            else:
                lines = ["Quick start guide step one connect the cable "
                         "then open the setup page and follow the wizard"]
            ocr_map.append({"image": basename, "lines": lines,
                            "n_segments": 1})
            continue

        key = (brand, model_idx)
        counter = model_counters.get(key, 0)
        model_counters[key] = counter + 1
        nic = (f"{_MODEL_LAYERS[model_idx]:02x}"
               f"{(counter >> 8) & 0xff:02x}{counter & 0xff:02x}")
        mac = parse_mac(_brand_oui(brand_idx) + nic)
        category = categories[i]
        bssids_by_category[category].append(mac.canonical)
        bssid_to_listing[mac.canonical] = listing_id

        ocr_map.append({
            "image": basename,
            "lines": [f"{brand} {model}",
                      f"MAC: {mac.colon_text().upper()}",
                      f"S/N FX{i:06d}"],
            "n_segments": 1,
        })

        lat, lon = _coords(i)
        t = listed_at
        placements = None
        if category == "pre_only":
            placements = [{"lat": lat, "lon": lon,
                           "from": format_ts(t - timedelta(days=30)),
                           "to": format_ts(t - timedelta(days=1))}]
            postal = MATCH_POSTAL if pre_seen < n_match_pre \
                else MISMATCH_POSTAL
            pre_seen += 1
            resolver_rows.append({"lat": lat, "lon": lon, "country": "US",
                                  "postal": postal})
        elif category == "post_only":
            placements = [{"lat": lat, "lon": lon,
                           "from": format_ts(t + timedelta(days=1)),
                           "to": format_ts(t + timedelta(days=35))}]
            postal = MATCH_POSTAL if post_seen < n_match_post \
                else MISMATCH_POSTAL
            post_seen += 1
            resolver_rows.append({"lat": lat, "lon": lon, "country": "US",
                                  "postal": postal})
        elif category == "both_stationary":
            placements = [{"lat": lat, "lon": lon,
                           "from": format_ts(t - timedelta(days=30)),
                           "to": format_ts(t + timedelta(days=35))}]
            resolver_rows.append({"lat": lat, "lon": lon, "country": "US",
                                  "postal": MATCH_POSTAL})
        elif category == "both_mover":
            mlat, mlon = _mover_coords(i)
            placements = [
                {"lat": lat, "lon": lon,
                 "from": format_ts(t - timedelta(days=30)),
                 "to": format_ts(t)},
                {"lat": mlat, "lon": mlon,
                 "from": format_ts(t + timedelta(seconds=1)),
                 "to": format_ts(t + timedelta(days=35))},
            ]
            resolver_rows.append({"lat": lat, "lon": lon, "country": "US",
                                  "postal": MATCH_POSTAL})
            resolver_rows.append({"lat": mlat, "lon": mlon,
                                  "country": "US",
                                  "postal": MISMATCH_POSTAL})
        if placements is not None:
            wps_rows.append({"bssid": mac.canonical, "accuracy_m": 25.0,
                             "placements": placements})

    registry_lines = []
    for idx, brand in enumerate(spec.brands):
        registry_lines.append(f"{_brand_oui(idx)} {brand}")
    for k in range(FILLER_PREFIXES):
        registry_lines.append(f"eeff{k:02x} Filler Networks {k}")

    brand_counts: dict[str, int] = {}
    for rec in listings:
        brand_counts[rec["brand"]] = brand_counts.get(rec["brand"], 0) + 1

    paths = {
        "marketplace": dest / "marketplace.jsonl",
        "wps": dest / "wps_placements.jsonl",
        "ocr_map": dest / "ocr_map.jsonl",
        "resolver": dest / "resolver.jsonl",
        "registry": dest / "oui_registry.txt",
        "brand_counts": dest / "brand_counts.jsonl",
        "truth": dest / "truth.json",
    }
    _write_jsonl(paths["marketplace"], listings)
    _write_jsonl(paths["wps"], wps_rows)
    _write_jsonl(paths["ocr_map"], ocr_map)
    _write_jsonl(paths["resolver"], resolver_rows)
    paths["registry"].write_text("\n".join(registry_lines) + "\n",
                                 encoding="utf-8")
    _write_jsonl(paths["brand_counts"],
                 [{"name": b, "estimated_count": c}
                  for b, c in sorted(brand_counts.items())])

    summary = {
        "seed": seed,
        "n_listings": n,
        "n_mac": n_mac,
        "counts": {
            "pre_only": n_pre,
            "post_only": n_post,
            "both": n_both,
            "both_movers": n_movers,
            "never": n_mac - n_pre - n_post - n_both,
            "match3_pre": n_match_pre,
            "match3_post": n_match_post,
        },
        "expected_rates": {
            "match3_pre": (n_match_pre / n_pre) if n_pre else None,
            "match3_post": (n_match_post / n_post) if n_post else None,
            "mover": (n_movers / n_both) if n_both else None,
        },
        "seller_prefix": SELLER_PREFIX,
        "auction_base": format_ts(AUCTION_BASE),
        "brands": list(spec.brands),
        "bssids_by_category": bssids_by_category,
        "bssid_to_listing": bssid_to_listing,
    }
    paths["truth"].write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    return {"paths": {k: str(v) for k, v in paths.items()},
            "summary": summary}
