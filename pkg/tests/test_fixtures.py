"""Synthetic corpus generation: determinism and constructed statistics."""

import json
from pathlib import Path

import pytest

from aptrail.fixtures import FixtureError, FixtureSpec, generate_fixtures
from aptrail.geolocate import FixtureWps
from aptrail.ingest import FixtureMarketplaceClient
from aptrail.model import RegistryFormat, load_oui_registry, parse_mac, parse_ts
from aptrail.planner import QueryCall


def _all_bytes(root: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())
            if p.is_file()}


def test_same_seed_byte_identical(tmp_path):
    spec = FixtureSpec(n_listings=150)
    a = generate_fixtures(tmp_path / "a", spec, seed=5)
    b = generate_fixtures(tmp_path / "b", spec, seed=5)
    assert _all_bytes(tmp_path / "a") == _all_bytes(tmp_path / "b")
    assert a["summary"] == b["summary"]


def test_different_seed_differs(tmp_path):
    spec = FixtureSpec(n_listings=150)
    generate_fixtures(tmp_path / "a", spec, seed=5)
    generate_fixtures(tmp_path / "b", spec, seed=6)
    a = (tmp_path / "a" / "truth.json").read_bytes()
    b = (tmp_path / "b" / "truth.json").read_bytes()
    assert a != b


def test_mac_density_exact_count(tmp_path):
    result = generate_fixtures(tmp_path, FixtureSpec(n_listings=1000,
                                                     mac_density=0.18),
                               seed=1)
    assert result["summary"]["n_mac"] == 180
    with_mac = 0
    with open(tmp_path / "ocr_map.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if any("MAC:" in text for text in rec["lines"]):
                with_mac += 1
    assert with_mac == 180


def test_category_counts_add_up(tmp_path):
    result = generate_fixtures(tmp_path, FixtureSpec(n_listings=500),
                               seed=2)
    counts = result["summary"]["counts"]
    n_mac = result["summary"]["n_mac"]
    assert counts["pre_only"] + counts["post_only"] + counts["both"] \
        + counts["never"] == n_mac
    cats = result["summary"]["bssids_by_category"]
    assert len(cats["pre_only"]) == counts["pre_only"]
    assert len(cats["both_mover"]) + len(cats["both_stationary"]) \
        == counts["both"]
    assert len(cats["both_mover"]) == counts["both_movers"]


def test_spec_validation():
    with pytest.raises(FixtureError):
        FixtureSpec(mac_density=1.5)
    with pytest.raises(FixtureError):
        FixtureSpec(n_listings=0)
    with pytest.raises(FixtureError):
        FixtureSpec(brands=())
    with pytest.raises(FixtureError):
        FixtureSpec(pre_only_fraction=0.6, post_only_fraction=0.6)


def test_outputs_load_into_fixture_clients(tmp_path):
    result = generate_fixtures(tmp_path, FixtureSpec(n_listings=120),
                               seed=3)
    client = FixtureMarketplaceClient.from_path(tmp_path
                                                / "marketplace.jsonl")
    page = client.search(QueryCall("wifi access point", page_size=200))
    assert page.total_count == 120
    wps = FixtureWps.from_path(tmp_path / "wps_placements.jsonl")
    registry = load_oui_registry(tmp_path / "oui_registry.txt",
                                 RegistryFormat.LINE_PAIRS)
    summary = result["summary"]
    located = [b for cat, bs in summary["bssids_by_category"].items()
               for b in bs if cat != "never"]
    assert located, "fixture should place some BSSIDs"
    mac = parse_mac(located[0])
    assert registry.contains(mac.oui())
    # a poll inside the placement window resolves to real coordinates
    lid = summary["bssid_to_listing"][mac.canonical]
    listing_rec = None
    with open(tmp_path / "marketplace.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["listing_id"] == lid:
                listing_rec = rec
                break
    assert listing_rec is not None
    t = parse_ts(listing_rec["listed_at"])
    found_any = False
    from datetime import timedelta
    for delta in (-10, 10):
        reply = wps.query(mac, t + timedelta(days=delta))
        if not reply.is_not_found:
            found_any = True
    assert found_any


def test_mover_pair_exceeds_threshold(tmp_path):
    from aptrail.analysis import haversine_km
    result = generate_fixtures(
        tmp_path, FixtureSpec(n_listings=300, pre_only_fraction=0.2,
                              post_only_fraction=0.2, both_fraction=0.4,
                              mover_fraction=1.0), seed=4)
    movers = result["summary"]["bssids_by_category"]["both_mover"]
    assert movers
    wps = FixtureWps.from_path(tmp_path / "wps_placements.jsonl")
    rec = wps.table[movers[0]]
    (a, b) = rec["placements"]
    km = haversine_km((a["lat"], a["lon"]), (b["lat"], b["lon"]))
    assert km > 1.0


def test_brand_counts_cover_all_listings(tmp_path):
    generate_fixtures(tmp_path, FixtureSpec(n_listings=120), seed=3)
    total = 0
    with open(tmp_path / "brand_counts.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            total += json.loads(line)["estimated_count"]
    assert total == 120
