"""MAC candidate extraction from OCR output, via a backend wire protocol.

A backend is any child process speaking line-delimited JSON on stdin/stdout:

  request:  {"id": <int>, "image": "<absolute path>", "segment": <bool>,
             "rotations": [0,90,180,270]}
  reply:    {"id": <int>, "segments": [{"segment_index": <int>,
             "rotation_deg": <int>, "lines": [{"text": "<str>",
             "confidence": <0..1>, "box": [[x,y]*4]}]}]}
  error:    {"id": <int>, "error": "<message>"}

Replies may arrive out of order; "id" correlates; backends flush per reply.

Text scanning is deliberately loose: false positives are expected and get
filtered downstream by the OUI registry and the positioning-system lookup.
"""

from __future__ import annotations

import json
import logging
import math
import re
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .model import MacAddress, MacCandidate, Listing, OuiRegistry

logger = logging.getLogger(__name__)

ROTATIONS = (0, 90, 180, 270)
_HEX = set("0123456789abcdefABCDEF")


class BackendError(Exception):
    """Base for OCR backend failures."""


class BackendUnavailable(BackendError):
    """The backend process cannot be started or its stream ended."""


class BackendMalformedReply(BackendError):
    """The backend violated the wire protocol; carries the offending line."""

    def __init__(self, message: str, line: str = ""):
        super().__init__(f"{message}: {line!r}" if line else message)
        self.line = line


class BackendRequestFailed(BackendError):
    """The backend replied with an error record for this request."""


@dataclass(frozen=True)
class OcrLine:
    text: str
    confidence: float
    box: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0,1]")
        if len(self.box) != 4:
            raise ValueError("box must have exactly 4 corner points")
        for pt in self.box:
            if len(pt) != 2 or not all(math.isfinite(v) for v in pt):
                raise ValueError(f"box point not finite: {pt!r}")


@dataclass(frozen=True)
class SegmentResult:
    segment_index: int
    rotation_deg: int
    lines: tuple[OcrLine, ...]

    def __post_init__(self):
        if self.rotation_deg not in ROTATIONS:
            raise ValueError(f"rotation_deg {self.rotation_deg} not in {ROTATIONS}")


def _parse_segments(reply: dict, line: str) -> list[SegmentResult]:
    try:
        out = []
        for seg in reply["segments"]:
            lines = tuple(
                OcrLine(
                    text=str(l["text"]),
                    confidence=float(l["confidence"]),
                    box=tuple((float(p[0]), float(p[1])) for p in l["box"]),
                )
                for l in seg["lines"]
            )
            out.append(SegmentResult(int(seg["segment_index"]),
                                     int(seg["rotation_deg"]), lines))
        return out
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise BackendMalformedReply(f"bad segments payload ({exc})", line) from exc


class ProcessBackend:
    """Client side of the wire protocol over a child process.

    One instance drives one process; a lock serializes callers so a worker
    pool can either share an instance or hold one each. process_many
    pipelines a batch of requests and correlates out-of-order replies.
    """

    def __init__(self, argv: Sequence[str]):
        self.argv = list(argv)
        self._proc: Optional[subprocess.Popen] = None
        self._next_id = 1
        self._stash: dict[int, dict] = {}
        self._outstanding: set[int] = set()
        self._lock = threading.Lock()

    def _ensure_started(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.argv,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    bufsize=1,
                )
            except OSError as exc:
                raise BackendUnavailable(f"cannot start {self.argv}: {exc}") from exc
        return self._proc

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None

    def __enter__(self) -> "ProcessBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _new_id(self) -> int:
        rid = self._next_id
        self._next_id += 1
        self._outstanding.add(rid)
        return rid

    def _send(self, proc: subprocess.Popen, rid: int, image: str | Path,
              segment: bool, rotations: Sequence[int]) -> None:
        request = {
            "id": rid,
            "image": str(Path(image).absolute()),
            "segment": bool(segment),
            "rotations": list(rotations),
        }
        try:
            proc.stdin.write(json.dumps(request) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendUnavailable(f"backend stdin closed: {exc}") from exc

    def _collect(self, proc: subprocess.Popen, rid: int) -> list[SegmentResult]:
        while rid not in self._stash:
            line = proc.stdout.readline()
            if line == "":
                raise BackendUnavailable("backend stream ended")
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                reply = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BackendMalformedReply(f"not JSON ({exc})", line) from exc
            if not isinstance(reply, dict) or not isinstance(
                    reply.get("id"), int):
                raise BackendMalformedReply("reply missing integer id", line)
            got = reply["id"]
            if got not in self._outstanding:
                raise BackendMalformedReply(
                    f"reply id {got} matches no outstanding request", line)
            self._stash[got] = reply
        self._outstanding.discard(rid)
        reply = self._stash.pop(rid)
        if "error" in reply:
            raise BackendRequestFailed(str(reply["error"]))
        if "segments" not in reply:
            raise BackendMalformedReply("reply has neither segments nor error",
                                        json.dumps(reply))
        return _parse_segments(reply, json.dumps(reply))

    def process(self, image: str | Path, segment: bool = True,
                rotations: Sequence[int] = ROTATIONS) -> list[SegmentResult]:
        with self._lock:
            proc = self._ensure_started()
            rid = self._new_id()
            self._send(proc, rid, image, segment, rotations)
            return self._collect(proc, rid)

    def process_many(self, images: Sequence[str | Path], segment: bool = True,
                     rotations: Sequence[int] = ROTATIONS
                     ) -> list[list[SegmentResult] | BackendError]:
        """Pipeline a batch; element i is image i's results or its error.

        Requests go out on a writer thread while replies are collected, so
        a backend that answers mid-batch cannot wedge either pipe.
        """
        with self._lock:
            proc = self._ensure_started()
            pairs = [(self._new_id(), image) for image in images]

            def send_all():
                try:
                    for rid, image in pairs:
                        self._send(proc, rid, image, segment, rotations)
                except BackendUnavailable:
                    pass  # collectors see EOF and report per request

            writer = threading.Thread(target=send_all)
            writer.start()
            out: list[list[SegmentResult] | BackendError] = []
            for rid, _ in pairs:
                try:
                    out.append(self._collect(proc, rid))
                except BackendError as exc:
                    out.append(exc)
            writer.join()
            return out


def run_backend(backend, image: str | Path, segment: bool = True,
                rotations: Sequence[int] = ROTATIONS) -> list[SegmentResult]:
    """Send one image through a backend, preserving its results verbatim."""
    path = Path(image)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    return backend.process(path, segment=segment, rotations=rotations)


def normalize_text(text: str) -> str:
    return "".join(c for c in text.lower() if c.isalnum())


# Exactly 12 hex chars whose alphanumeric neighbors cannot extend the run.
_NORM_RUN_RE = re.compile(
    r"(?<![0-9a-f])[0-9a-f]{12}(?![0-9a-f])")

# Six hex pairs joined by one consistent separator, captured inside a
# lookahead so chained windows (overlapping matches) are all seen.
_SEP_FORM_RE = re.compile(
    r"(?<![0-9a-fA-F])(?=([0-9a-fA-F]{2}(([:\- .])[0-9a-fA-F]{2}\3[0-9a-fA-F]{2}"
    r"\3[0-9a-fA-F]{2}\3[0-9a-fA-F]{2}\3[0-9a-fA-F]{2})(?![0-9a-fA-F])))")


def scan_text(raw_text: str) -> list[tuple[str, str]]:
    """All MAC-shaped matches in one blob of OCR text.

    Returns (canonical, raw_match) pairs in discovery order: the normalized
    scan (lowercased, non-alphanumerics dropped, maximal 12-hex runs) first,
    then the separator-form scan over the raw text.
    """
    found: list[tuple[str, str]] = []
    norm = normalize_text(raw_text)
    for m in _NORM_RUN_RE.finditer(norm):
        found.append((m.group(0), m.group(0)))
    for m in _SEP_FORM_RE.finditer(raw_text):
        window = m.group(1)
        canonical = re.sub(r"[:\- .]", "", window).lower()
        found.append((canonical, window))
    return found


def extract_candidates(results: Iterable[SegmentResult],
                       registry: OuiRegistry,
                       listing_id: str = "",
                       image_id: str = "") -> list[MacCandidate]:
    """Scan every segment-rotation's concatenated text for MAC candidates.

    Same mac seen twice in one image collapses to the first sighting's
    provenance. No confidence threshold is applied.
    """
    seen: dict[str, MacCandidate] = {}
    for result in results:
        blob = "".join(line.text for line in result.lines)
        for canonical, raw in scan_text(blob):
            if canonical in seen:
                continue
            mac = MacAddress(canonical)
            seen[canonical] = MacCandidate(
                mac=mac,
                raw_match=raw,
                listing_id=listing_id,
                image_id=image_id,
                rotation_deg=result.rotation_deg,
                segment_index=result.segment_index,
                oui_valid=registry.contains(mac.oui()),
            )
    return list(seen.values())


def extract_from_listing(listing: Listing,
                         backend,
                         registry: OuiRegistry,
                         segment: bool = True,
                         rotations: Sequence[int] = ROTATIONS,
                         errors: Optional[list] = None) -> list[MacCandidate]:
    """Union of candidates over all fetched images, deduplicated by mac.

    A backend failure on one image is recorded (as (image_id, error) when a
    list is passed) and does not abort the listing.
    """
    merged: dict[str, MacCandidate] = {}
    for ref in listing.image_refs:
        if not ref.local_path:
            continue
        try:
            results = run_backend(backend, ref.local_path,
                                  segment=segment, rotations=rotations)
        except (BackendError, FileNotFoundError) as exc:
            logger.error("backend failed on %s: %s", ref.local_path, exc)
            if errors is not None:
                errors.append((ref.image_id, exc))
            continue
        for cand in extract_candidates(results, registry,
                                       listing_id=listing.listing_id,
                                       image_id=ref.image_id):
            merged.setdefault(cand.mac.canonical, cand)
    logger.info("listing %s: %d candidates", listing.listing_id, len(merged))
    return list(merged.values())
