"""Command-line pipeline driver.

Each subcommand wraps one stage as a library call against the shared
store, writes exactly one run manifest, and exits 0 on success, 1 on
partial failure, 2 on usage errors. Numeric options default to the
config stack (file + APTRAIL_* environment overrides).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shlex
import sys
from pathlib import Path

from . import analysis, geolocate, ingest, planner, validation
from .config import load_config
from .extraction import (
    BackendError,
    ProcessBackend,
    extract_candidates,
    run_backend,
)
from .fixtures import FixtureSpec, generate_fixtures
from .model import (
    RegistryFormat,
    candidate_from_record,
    candidate_to_record,
    listing_from_record,
    listing_to_record,
    load_oui_registry,
    parse_mac,
    parse_ts,
)
from .store import (
    RunManifest,
    Store,
    TABLE_CANDIDATES,
    TABLE_IMAGES,
    TABLE_LISTINGS,
    save_manifest,
)
from .validation import (
    ImageEvidence,
    Partition,
    load_annotations,
    ocr_word_count,
    partition_images,
    run_validation,
    sample_for_annotation,
    write_metrics_csv,
)

logger = logging.getLogger(__name__)


def _finish_manifest(root, kind: str, args, **metrics) -> None:
    params = {}
    for key, value in vars(args).items():
        if key in ("handler", "config", "verbose"):
            continue
        params[key] = str(value) if isinstance(value, Path) else value
    manifest = RunManifest(kind=kind, seed=getattr(args, "seed", None),
                           params=params)
    save_manifest(root, manifest.finish(**metrics))


def _cmd_plan(args) -> int:
    cfg = load_config(args.config)
    cap = args.cap or cfg.results_cap
    page_size = args.page_size or cfg.page_size
    if args.counts:
        options = []
        with open(args.counts, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    options.append(planner.FilterOption(
                        rec["name"], rec["estimated_count"]))
        groups, flagged = planner.pack_filters(options, cap)
    else:
        # unfiltered pull: paginate one open group to the cap
        groups, flagged = [planner.FilterGroup((), cap)], []
    plan = planner.build_exhaustive_plan(args.query, groups, cap=cap,
                                         page_size=page_size)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        plan.dump(fh)
    for name in plan.non_exhaustive_groups:
        print(f"warning: filter {name!r} exceeds the cap; tail unreachable",
              file=sys.stderr)
    print(f"plan: {len(plan.calls)} calls "
          f"({len(groups)} groups) -> {out}")
    _finish_manifest(out.parent, "plan", args, calls=len(plan.calls),
                     groups=len(groups), non_exhaustive=len(flagged),
                     out=str(out))
    return 0


def _cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    cap = args.cap or cfg.results_cap
    quota_limit = args.quota or cfg.daily_quota
    client = ingest.FixtureMarketplaceClient.from_path(
        args.marketplace, results_cap=cap)
    with open(args.plan, "r", encoding="utf-8") as fh:
        plan = planner.QueryPlan.load(fh)
    quota = ingest.QuotaState(quota_limit)
    code = 0
    with Store(args.store) as store:
        try:
            report = ingest.execute_plan(plan, client, quota, store,
                                         start_at=args.resume)
            if report.failed:
                code = 1
        except ingest.QuotaExhausted as exc:
            report = exc.report
            code = 1
            print(f"quota exhausted; resume with --resume {exc.cursor}",
                  file=sys.stderr)
        store.compact()
    print(f"ingest: {report.new} new, {report.duplicate} duplicate, "
          f"{report.failed} failed, {report.calls_used} calls")
    _finish_manifest(args.store, "ingest", args, new=report.new,
                     duplicate=report.duplicate, failed=report.failed,
                     calls_used=report.calls_used)
    return code


def _fixture_fetcher(url: str) -> bytes:
    """Stand-in for the HTTP image fetcher (live download not shipped):
    content is a deterministic function of the URL."""
    return b"fixture-image:" + url.encode("utf-8")


def _cmd_fetch_images(args) -> int:
    fetched = 0
    errors: list = []
    with Store(args.store) as store:
        for key, rec in list(store.items(TABLE_LISTINGS)):
            listing = listing_from_record(rec)
            refs = ingest.fetch_images(listing, _fixture_fetcher, args.dest,
                                       errors=errors)
            fetched += sum(1 for r in refs if r.local_path)
            updated = dataclasses.replace(listing, image_refs=refs)
            store.put(TABLE_LISTINGS, key, listing_to_record(updated))
        store.compact()
    print(f"fetch-images: {fetched} images on disk, {len(errors)} failed")
    _finish_manifest(args.store, "fetch-images", args, fetched=fetched,
                     failed=len(errors))
    return 1 if errors else 0


def _cmd_extract(args) -> int:
    cfg = load_config(args.config)
    rotations = tuple(int(r) for r in args.rotations.split(",")) \
        if args.rotations else cfg.rotations
    registry = load_oui_registry(args.registry,
                                 RegistryFormat(args.registry_format))
    n_images = n_candidates = 0
    errors: list = []
    with Store(args.store) as store, \
            ProcessBackend(shlex.split(args.backend)) as backend:
        for key, rec in list(store.items(TABLE_LISTINGS)):
            listing = listing_from_record(rec)
            merged: dict[str, object] = {}
            for ref in listing.image_refs:
                if not ref.local_path:
                    continue
                try:
                    results = run_backend(backend, ref.local_path,
                                          segment=not args.no_segment,
                                          rotations=rotations)
                except (BackendError, FileNotFoundError) as exc:
                    errors.append((ref.image_id, str(exc)))
                    continue
                n_images += 1
                store.put(TABLE_IMAGES, (listing.listing_id, ref.image_id), {
                    "listing_id": listing.listing_id,
                    "image_id": ref.image_id,
                    "word_count": ocr_word_count(results),
                })
                for cand in extract_candidates(
                        results, registry, listing_id=listing.listing_id,
                        image_id=ref.image_id):
                    merged.setdefault(cand.mac.canonical, cand)
            for canonical, cand in sorted(merged.items()):
                store.put(TABLE_CANDIDATES,
                          (listing.listing_id, canonical),
                          candidate_to_record(cand))
                n_candidates += 1
        store.compact()
    print(f"extract: {n_images} images, {n_candidates} candidates, "
          f"{len(errors)} errors")
    _finish_manifest(args.store, "extract", args, images=n_images,
                     candidates=n_candidates, errors=len(errors))
    return 1 if errors else 0


def _valid_bssids(store: Store) -> list[str]:
    return sorted({rec["mac"] for _, rec in store.items(TABLE_CANDIDATES)
                   if rec.get("oui_valid")})


def _cmd_geolocate(args) -> int:
    wps = geolocate.FixtureWps.from_path(args.wps)
    start = parse_ts(args.start)
    with Store(args.store) as store:
        bssids = [parse_mac(b) for b in _valid_bssids(store)]
        report = geolocate.schedule_polling(bssids, args.days, wps, store,
                                            start=start,
                                            workers=args.workers)
        store.compact()
    print(f"geolocate: {report.queried} queried, {report.stored} stored, "
          f"{report.not_found} not found, {report.skipped} skipped, "
          f"{len(report.failures)} failed")
    _finish_manifest(args.store, "geolocate", args, queried=report.queried,
                     stored=report.stored, not_found=report.not_found,
                     skipped=report.skipped, failed=len(report.failures))
    return 1 if report.failures else 0


def _auction_and_listings(store: Store):
    """bssid -> auction moment (earliest owning listing's listed_at) and
    bssid -> that listing."""
    listings = {}
    for _, rec in store.items(TABLE_LISTINGS):
        listing = listing_from_record(rec)
        listings[listing.listing_id] = listing
    auction_by_bssid = {}
    listing_by_bssid = {}
    for _, rec in store.items(TABLE_CANDIDATES):
        if not rec.get("oui_valid"):
            continue
        listing = listings.get(rec["listing_id"])
        if listing is None or listing.listed_at is None:
            continue
        bssid = rec["mac"]
        current = auction_by_bssid.get(bssid)
        if current is None or listing.listed_at < current:
            auction_by_bssid[bssid] = listing.listed_at
            listing_by_bssid[bssid] = listing
    return auction_by_bssid, listing_by_bssid, listings


def _cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    rows: list[dict] = []
    with Store(args.store) as store:
        auction_map, listing_by_bssid, listings = _auction_and_listings(
            store)
        timelines = {tl.bssid.canonical: tl for tl in
                     geolocate.build_timelines(store, auction_map)}
        if args.report == "exposure":
            resolver = analysis.FixturePostalResolver.from_path(
                args.resolver) if args.resolver \
                else analysis.FixturePostalResolver([])
            summary = analysis.exposure_summary(
                timelines.values(), listing_by_bssid, resolver)
            rows = summary.to_records()
        elif args.report == "movement":
            movable = [tl for tl in timelines.values()
                       if tl.category is geolocate.Category.BOTH
                       and len(tl.observations) >= 2]
            rep = analysis.movement_report(
                movable, stationary_km=args.stationary_km
                or cfg.stationary_km)
            rows = [{"row": "summary", "stationary": rep.stationary,
                     "moved": rep.moved, "threshold_km": rep.threshold_km}]
            rows += [{"row": "distance", "bssid": b, "km": km}
                     for b, km in rep.distances_km]
            rows += [{"row": "cdf", "km": v, "fraction": f}
                     for v, f in rep.cdf]
        elif args.report == "conditions":
            grouped: dict[str, list] = {}
            for bssid, tl in timelines.items():
                listing = listing_by_bssid.get(bssid)
                if listing is not None:
                    grouped.setdefault(listing.listing_id, []).append(tl)
            items = [(listings[lid], tls) for lid, tls in sorted(
                grouped.items())]
            rep = analysis.condition_mismatch(items)
            rows = [{"row": "summary", "flagged": rep.flagged_count,
                     "population": rep.population,
                     "open_box_share": rep.open_box_share}]
            rows += [{"row": "flagged", "listing_id": f.listing_id,
                      "condition": f.condition_label.value}
                     for f in rep.flagged]
        elif args.report == "bands":
            labeled = [(parse_mac(b), listing_by_bssid[b].title)
                       for b in sorted(listing_by_bssid)]
            if labeled:
                index = analysis.build_model_bands(
                    labeled, gap=args.band_gap or cfg.band_gap)
                for (oui, label), intervals in sorted(index.bands.items()):
                    for iv in intervals:
                        rows.append({"row": "band", "oui": oui,
                                     "label": label, "lo": iv.lo,
                                     "hi": iv.hi, "support": iv.support})
            if args.scatter_out:
                analysis.write_csv(
                    args.scatter_out, ["byte4", "byte5", "model"],
                    analysis.scatter_triples(labeled))
        elif args.report == "regions":
            regions = analysis.load_regions(args.regions)
            hits = analysis.sensitive_hits(timelines.values(), regions)
            rows = [{"row": "hit", "bssid": h.bssid, "region": h.region,
                     "pre_auction": h.observed_at_pre, "lat": h.lat,
                     "lon": h.lon} for h in hits]
        else:  # timelines
            stats = geolocate.timeline_stats(timelines.values())
            rows = [{"row": "summary",
                     "median_days_observed": stats.median_days_observed,
                     "median_span_days": stats.median_span_days}]
            rows += [{"row": "days_cdf", "value": v, "fraction": f}
                     for v, f in stats.cdf_series(stats.days_observed)]
    analysis.write_jsonl(args.out, rows)
    print(f"analyze {args.report}: {len(rows)} rows -> {args.out}")
    _finish_manifest(args.store, f"analyze-{args.report}", args,
                     rows=len(rows), out=str(args.out))
    return 0


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    with Store(args.store) as store:
        cands_by_image: dict[str, list] = {}
        for _, rec in store.items(TABLE_CANDIDATES):
            cands_by_image.setdefault(rec["image_id"], []).append(
                candidate_from_record(rec))
        evidences = {}
        for _, rec in store.items(TABLE_IMAGES):
            image_id = rec["image_id"]
            evidences[image_id] = ImageEvidence(
                image_id=image_id,
                candidates=tuple(cands_by_image.get(image_id, ())),
                word_count=rec.get("word_count", 0),
            )
    annotations = load_annotations(args.annotations)
    sampled = None
    if args.sample:
        parts = partition_images(evidences.values())
        sampled = sample_for_annotation(parts, args.sample,
                                        args.seed
                                        if args.seed is not None
                                        else cfg.seed)
    report = run_validation(evidences, annotations, sampled)
    weights = None
    if args.weights:
        w = [p for p in args.weights.split(",") if p.strip()]
        if len(w) != 3:
            print("--weights needs three comma-separated numbers",
                  file=sys.stderr)
            return 2
        weights = dict(zip(Partition, w))
    write_metrics_csv(args.out, report, weights)
    totals = report.totals
    print(f"validate: tp={totals.tp} fp={totals.fp} fn={totals.fn} "
          f"tn={totals.tn} inconclusive={len(report.inconclusive)} "
          f"-> {args.out}")
    _finish_manifest(args.store, "validate", args, tp=totals.tp,
                     fp=totals.fp, fn=totals.fn, tn=totals.tn,
                     inconclusive=len(report.inconclusive))
    return 0


def _cmd_fixtures(args) -> int:
    spec = FixtureSpec(
        n_listings=args.n_listings,
        brands=tuple(args.brands.split(",")) if args.brands
        else FixtureSpec.brands,
        mac_density=args.mac_density,
        mover_fraction=args.mover_fraction,
        match3_rate_pre=args.match3_pre,
        match3_rate_post=args.match3_post,
    )
    result = generate_fixtures(args.dest, spec, seed=args.seed)
    for name, path in sorted(result["paths"].items()):
        print(f"fixtures: {name} -> {path}")
    _finish_manifest(args.dest, "fixtures", args,
                     **result["summary"]["counts"])
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aptrail",
        description="Marketplace listing enumeration, MAC extraction, "
                    "geolocation, and analysis pipeline.")
    parser.add_argument("--config", default=None,
                        help="JSON config file (APTRAIL_* env overrides)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="emit an exhaustive query plan")
    p.add_argument("--query", required=True)
    p.add_argument("--cap", type=int, default=None)
    p.add_argument("--page-size", type=int, default=None)
    p.add_argument("--counts", default=None,
                   help="JSONL {name, estimated_count} filter options")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_plan)

    p = sub.add_parser("ingest", help="execute a plan against a "
                                      "marketplace fixture")
    p.add_argument("--plan", required=True)
    p.add_argument("--marketplace", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--quota", type=int, default=None)
    p.add_argument("--cap", type=int, default=None)
    p.add_argument("--resume", type=int, default=0)
    p.set_defaults(handler=_cmd_ingest)

    p = sub.add_parser("fetch-images", help="materialize listing images")
    p.add_argument("--store", required=True)
    p.add_argument("--dest", required=True)
    p.set_defaults(handler=_cmd_fetch_images)

    p = sub.add_parser("extract", help="OCR images and extract MAC "
                                       "candidates")
    p.add_argument("--store", required=True)
    p.add_argument("--backend", required=True,
                   help="backend command line, e.g. "
                        "'python3 -m aptrail.fixture_backend --map M'")
    p.add_argument("--registry", required=True)
    p.add_argument("--registry-format", default="line_pairs",
                   choices=[f.value for f in RegistryFormat])
    p.add_argument("--rotations", default=None)
    p.add_argument("--no-segment", action="store_true")
    p.set_defaults(handler=_cmd_extract)

    p = sub.add_parser("geolocate", help="poll the positioning service")
    p.add_argument("--store", required=True)
    p.add_argument("--wps", required=True)
    p.add_argument("--start", required=True,
                   help="first poll timestamp, ISO-8601")
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=_cmd_geolocate)

    p = sub.add_parser("analyze", help="run a report over the store")
    p.add_argument("--store", required=True)
    p.add_argument("--report", required=True,
                   choices=["exposure", "movement", "conditions", "bands",
                            "regions", "timelines"])
    p.add_argument("--out", required=True)
    p.add_argument("--resolver", default=None)
    p.add_argument("--regions", default=None)
    p.add_argument("--scatter-out", default=None)
    p.add_argument("--stationary-km", type=float, default=None)
    p.add_argument("--band-gap", type=int, default=None)
    p.set_defaults(handler=_cmd_analyze)

    p = sub.add_parser("validate", help="annotation harness metrics")
    p.add_argument("--store", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--weights", default=None,
                   help="three corpus shares, e.g. 0.088,0.338,0.574")
    p.set_defaults(handler=_cmd_validate)

    p = sub.add_parser("fixtures", help="generate a synthetic corpus")
    p.add_argument("--dest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-listings", type=int, default=1000)
    p.add_argument("--brands", default=None)
    p.add_argument("--mac-density", type=float, default=0.18)
    p.add_argument("--mover-fraction", type=float, default=0.5)
    p.add_argument("--match3-pre", type=float, default=0.5)
    p.add_argument("--match3-post", type=float, default=0.06)
    p.set_defaults(handler=_cmd_fixtures)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if args.verbose:
        logging.basicConfig(level=logging.INFO)
    try:
        return args.handler(args)
    except Exception as exc:  # noqa: BLE001 - single CLI failure boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
