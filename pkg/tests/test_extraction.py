import io
import json
import random
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aptrail.extraction import (
    BackendMalformedReply,
    BackendRequestFailed,
    BackendUnavailable,
    OcrLine,
    ProcessBackend,
    SegmentResult,
    extract_candidates,
    extract_from_listing,
    normalize_text,
    run_backend,
    scan_text,
)
from aptrail.model import ImageRef, Listing, load_oui_registry
from oracle_scan import oracle_scan, random_noisy_string

BOX = ((0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0))


def seg(texts, rotation=0, index=0):
    lines = tuple(OcrLine(t, 0.9, BOX) for t in texts)
    return SegmentResult(index, rotation, lines)


def registry_with(*prefixes):
    body = "".join(f"{p}\tVendor {p}\n" for p in prefixes)
    return load_oui_registry(io.StringIO(body), format="line_pairs")


class TestScanText:
    def test_colon_form_after_label(self):
        found = scan_text("MAC: A0:2B:CA:92:1C:DA")
        assert [c for c, _ in found] == ["a02bca921cda"]

    def test_bare_hex_serial(self):
        found = scan_text("S/N 4C1B2F9A0D3E")
        assert [c for c, _ in found] == ["4c1b2f9a0d3e"]

    def test_plain_words(self):
        assert scan_text("hello world") == []

    def test_sixteen_hex_run_not_emitted(self):
        assert scan_text("deadbeefdeadbeef") == []

    def test_hex_extended_run_not_emitted(self):
        # 12 good chars preceded by a hex char merge into a 13-run
        assert scan_text("fa02bca921cda") == []

    def test_separator_form_with_hex_neighbor_rejected(self):
        assert scan_text("1aa:bb:cc:dd:ee:f0") == []

    def test_chained_windows_all_emit(self):
        found = [c for c, _ in scan_text("aa:bb:cc:dd:ee:ff:00")]
        assert found == ["aabbccddeeff", "bbccddeeff00"]

    def test_mixed_separators_found_only_via_normalized(self):
        found = scan_text("xx a0:2b-ca:92:1c:da yy")
        assert [c for c, _ in found] == ["a02bca921cda"]
        # raw_match comes from the normalized scan, not the raw window
        assert found[0][1] == "a02bca921cda"

    def test_dot_and_space_separators(self):
        # both scans can emit the same address; candidates dedup later
        assert {c for c, _ in scan_text("10-29-ca-2a-be-2f")} == {"1029ca2abe2f"}
        assert {c for c, _ in scan_text("g 10.29.ca.2a.be.2f g")} == {"1029ca2abe2f"}
        assert {c for c, _ in scan_text("g 10 29 ca 2a be 2f g")} == {"1029ca2abe2f"}

    def test_cross_line_concatenation(self):
        # callers join lines with no filler, so split addresses reassemble
        found = scan_text("".join(["Label A0:2B:", "CA:92:1C:DA end"]))
        assert [c for c, _ in found] == ["a02bca921cda"]


class TestOracleAgreement:
    def test_seeded_corpus(self):
        rng = random.Random(20240501)
        for _ in range(500):
            text = random_noisy_string(rng)
            got = {c for c, _ in scan_text(text)}
            assert got == oracle_scan(text), text

    @settings(max_examples=200)
    @given(st.text(alphabet="abcdef0123456789xg :-.", max_size=60))
    def test_hypothesis_strings(self, text):
        got = {c for c, _ in scan_text(text)}
        assert got == oracle_scan(text)

    def test_normalization_idempotent(self):
        rng = random.Random(7)
        for _ in range(200):
            text = random_noisy_string(rng)
            norm = normalize_text(text)
            assert normalize_text(norm) == norm
            once = {c for c, _ in scan_text(norm)}
            twice = {c for c, _ in scan_text(normalize_text(norm))}
            assert once == twice


class TestExtractCandidates:
    def test_oui_validity_set_by_registry(self):
        registry = registry_with("a02bca")
        cands = extract_candidates(
            [seg(["MAC: A0:2B:CA:92:1C:DA"]), seg(["S/N 4C1B2F9A0D3E"])],
            registry, listing_id="L1", image_id="I1")
        by_mac = {c.mac.canonical: c for c in cands}
        assert by_mac["a02bca921cda"].oui_valid
        assert not by_mac["4c1b2f9a0d3e"].oui_valid
        assert by_mac["a02bca921cda"].listing_id == "L1"

    def test_duplicate_mac_keeps_first_provenance(self):
        registry = registry_with("a02bca")
        cands = extract_candidates(
            [seg(["A0:2B:CA:92:1C:DA"], rotation=0, index=0),
             seg(["A0:2B:CA:92:1C:DA"], rotation=90, index=1)],
            registry)
        assert len(cands) == 1
        assert cands[0].rotation_deg == 0
        assert cands[0].segment_index == 0

    def test_low_confidence_lines_still_scanned(self):
        registry = registry_with("a02bca")
        line = OcrLine("A0:2B:CA:92:1C:DA", 0.01, BOX)
        cands = extract_candidates([SegmentResult(0, 0, (line,))], registry)
        assert len(cands) == 1

    def test_shrinking_registry_never_adds_valid(self):
        rng = random.Random(3)
        macs = ["".join(rng.choice("0123456789abcdef") for _ in range(12))
                for _ in range(50)]
        prefixes = sorted({m[:6] for m in macs})
        full = registry_with(*prefixes)
        segs = [seg([" ".join(m[i:i + 2] for i in range(0, 12, 2))])
                for m in macs]
        base = sum(c.oui_valid for c in extract_candidates(segs, full))
        dropped = full
        removed = 0
        for p in prefixes:
            dropped = dropped.without([p])
            removed += 1
            now = sum(c.oui_valid for c in extract_candidates(segs, dropped))
            assert now <= base
            base = now
        assert base == 0 and removed == len(prefixes)


class TestOcrLineValidation:
    def test_confidence_range(self):
        with pytest.raises(ValueError):
            OcrLine("x", 1.5, BOX)

    def test_box_shape(self):
        with pytest.raises(ValueError):
            OcrLine("x", 0.5, ((0.0, 0.0),))

    def test_non_finite_box(self):
        bad = ((0.0, 0.0), (1.0, 0.0), (float("nan"), 1.0), (0.0, 1.0))
        with pytest.raises(ValueError):
            OcrLine("x", 0.5, bad)

    def test_rotation_whitelist(self):
        with pytest.raises(ValueError):
            SegmentResult(0, 45, ())


@pytest.fixture
def backend_map(tmp_path):
    def write(entries, **flags):
        map_path = tmp_path / "map.jsonl"
        with map_path.open("w") as fh:
            for e in entries:
                fh.write(json.dumps(e) + "\n")
        argv = [sys.executable, "-m", "aptrail.fixture_backend",
                "--map", str(map_path)]
        for k, v in flags.items():
            flag = "--" + k.replace("_", "-")
            if v is True:
                argv.append(flag)
            else:
                argv.extend([flag, str(v)])
        return argv

    return write


@pytest.fixture
def image_file(tmp_path):
    def make(name):
        p = tmp_path / name
        p.write_bytes(b"imagebytes")
        return p

    return make


class TestWireProtocol:
    def test_segments_times_rotations(self, backend_map, image_file):
        argv = backend_map([{"image": "a.jpg", "lines": ["MAC A0:2B:CA:92:1C:DA"],
                             "n_segments": 2}])
        img = image_file("a.jpg")
        with ProcessBackend(argv) as backend:
            results = run_backend(backend, img, segment=True)
        assert len(results) == 8
        assert {(r.segment_index, r.rotation_deg) for r in results} == {
            (s, r) for s in (0, 1) for r in (0, 90, 180, 270)}

    def test_whole_image_mode(self, backend_map, image_file):
        argv = backend_map([{"image": "a.jpg", "lines": ["x"], "n_segments": 3}])
        img = image_file("a.jpg")
        with ProcessBackend(argv) as backend:
            results = run_backend(backend, img, segment=False,
                                  rotations=(0, 180))
        assert len(results) == 2
        assert {r.rotation_deg for r in results} == {0, 180}

    def test_malformed_line_raises_with_content(self, backend_map, image_file):
        argv = backend_map([{"image": "a.jpg", "lines": []}], garbage_every=1)
        img = image_file("a.jpg")
        with ProcessBackend(argv) as backend:
            with pytest.raises(BackendMalformedReply) as exc:
                backend.process(img)
        assert "not json" in str(exc.value) or "<<not json>>" in str(exc.value)

    def test_error_reply_then_stream_continues(self, backend_map, image_file):
        argv = backend_map([{"image": "ok.jpg", "lines": ["text"]}],
                           fail_substring="bad")
        bad = image_file("bad.jpg")
        ok = image_file("ok.jpg")
        with ProcessBackend(argv) as backend:
            with pytest.raises(BackendRequestFailed):
                backend.process(bad)
            results = backend.process(ok)
        assert results[0].lines[0].text == "text"

    def test_out_of_order_replies_correlate(self, backend_map, image_file):
        argv = backend_map(
            [{"image": f"{i}.jpg", "lines": [f"line-{i}"]} for i in range(4)],
            shuffle=4)
        paths = [image_file(f"{i}.jpg") for i in range(4)]
        with ProcessBackend(argv) as backend:
            results = backend.process_many(paths, rotations=(0,))
        texts = [r[0].lines[0].text for r in results]
        assert texts == ["line-0", "line-1", "line-2", "line-3"]

    def test_unmapped_image_is_empty_not_error(self, backend_map, image_file):
        argv = backend_map([{"image": "other.jpg", "lines": ["x"]}])
        img = image_file("mystery.jpg")
        with ProcessBackend(argv) as backend:
            results = backend.process(img, rotations=(0,))
        assert len(results) == 1
        assert results[0].lines == ()

    def test_dead_backend_unavailable(self, image_file):
        img = image_file("a.jpg")
        backend = ProcessBackend([sys.executable, "-c", "pass"])
        with pytest.raises(BackendUnavailable):
            backend.process(img)

    def test_missing_image_precondition(self, backend_map, tmp_path):
        argv = backend_map([])
        with ProcessBackend(argv) as backend:
            with pytest.raises(FileNotFoundError):
                run_backend(backend, tmp_path / "ghost.jpg")


class TestExtractFromListing:
    def listing_with(self, image_file, names):
        refs = tuple(ImageRef(image_id=n.split(".")[0],
                              local_path=str(image_file(n)))
                     for n in names)
        return Listing(listing_id="L9", image_refs=refs)

    def test_same_mac_in_two_images_dedupes(self, backend_map, image_file):
        argv = backend_map([
            {"image": "a.jpg", "lines": ["A0:2B:CA:92:1C:DA"]},
            {"image": "b.jpg", "lines": ["a0-2b-ca-92-1c-da"]},
        ])
        listing = self.listing_with(image_file, ["a.jpg", "b.jpg"])
        with ProcessBackend(argv) as backend:
            cands = extract_from_listing(listing, backend, registry_with("a02bca"))
        assert len(cands) == 1
        assert cands[0].image_id == "a"

    def test_distinct_macs_both_kept(self, backend_map, image_file):
        argv = backend_map([
            {"image": "a.jpg", "lines": ["A0:2B:CA:92:1C:DA"]},
            {"image": "b.jpg", "lines": ["10:29:CA:2A:BE:2F"]},
        ])
        listing = self.listing_with(image_file, ["a.jpg", "b.jpg"])
        with ProcessBackend(argv) as backend:
            cands = extract_from_listing(listing, backend, registry_with("a02bca"))
        assert {c.mac.canonical for c in cands} == {"a02bca921cda",
                                                    "1029ca2abe2f"}

    def test_one_bad_image_does_not_abort(self, backend_map, image_file):
        argv = backend_map([
            {"image": "a.jpg", "lines": ["A0:2B:CA:92:1C:DA"]},
            {"image": "c.jpg", "lines": ["10:29:CA:2A:BE:2F"]},
        ], fail_substring="zzfail")
        listing = self.listing_with(image_file, ["a.jpg", "zzfail.jpg", "c.jpg"])
        errors = []
        with ProcessBackend(argv) as backend:
            cands = extract_from_listing(listing, backend,
                                         registry_with("a02bca"), errors=errors)
        assert len(cands) == 2
        assert len(errors) == 1 and errors[0][0] == "zzfail"

    def test_unfetched_images_skipped(self, backend_map):
        refs = (ImageRef(image_id="nofile"),)
        listing = Listing(listing_id="L1", image_refs=refs)
        with ProcessBackend(backend_map([])) as backend:
            assert extract_from_listing(listing, backend,
                                        registry_with("a02bca")) == []
