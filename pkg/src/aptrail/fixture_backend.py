"""Deterministic OCR backend for tests: replies come from a lookup file.

Runs as a child process speaking the line-delimited JSON protocol on
stdin/stdout. The map file holds one JSON object per line:

  {"image": "<basename>", "lines": ["text", ...], "n_segments": 1}

A request resolves by image basename; unmapped images yield one empty
segment (or an error reply with --error-missing). Fault-injection flags
exercise the client's protocol handling:

  --shuffle N       buffer N requests, reply in reverse arrival order
  --garbage-every N emit one non-JSON line before every Nth reply
  --fail-substring S error reply for any image path containing S
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def load_map(path: str) -> dict[str, dict]:
    table: dict[str, dict] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            table[rec["image"]] = rec
    return table


def _reply_for(request: dict, table: dict[str, dict],
               fail_substring: str, error_missing: bool) -> dict:
    rid = request["id"]
    image = request.get("image", "")
    if fail_substring and fail_substring in image:
        return {"id": rid, "error": f"injected failure for {image}"}
    name = Path(image).name
    entry = table.get(name)
    if entry is None:
        if error_missing:
            return {"id": rid, "error": f"no such image: {name}"}
        entry = {"lines": []}
    rotations = request.get("rotations", [0])
    n_segments = entry.get("n_segments", 1) if request.get("segment") else 1
    segments = []
    for seg in range(n_segments):
        for rot in rotations:
            lines = [
                {"text": text, "confidence": 0.9,
                 "box": [[0, i * 20], [100, i * 20], [100, i * 20 + 18],
                         [0, i * 20 + 18]]}
                for i, text in enumerate(entry.get("lines", []))
            ]
            segments.append({"segment_index": seg, "rotation_deg": rot,
                             "lines": lines})
    return {"id": rid, "segments": segments}


def serve(stdin, stdout, table: dict[str, dict], shuffle: int = 0,
          garbage_every: int = 0, fail_substring: str = "",
          error_missing: bool = False) -> None:
    pending: list[dict] = []
    sent = 0

    def emit(reply: dict) -> None:
        nonlocal sent
        sent += 1
        if garbage_every and sent % garbage_every == 0:
            stdout.write("<<not json>>\n")
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()

    def flush_pending() -> None:
        while pending:
            emit(pending.pop())

    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            continue
        reply = _reply_for(request, table, fail_substring, error_missing)
        if shuffle > 1:
            pending.append(reply)
            if len(pending) >= shuffle:
                flush_pending()
        else:
            emit(reply)
    flush_pending()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="fixture OCR backend: wire-protocol replies from a map file")
    parser.add_argument("--map", required=True, help="JSONL lookup file")
    parser.add_argument("--shuffle", type=int, default=0)
    parser.add_argument("--garbage-every", type=int, default=0)
    parser.add_argument("--fail-substring", default="")
    parser.add_argument("--error-missing", action="store_true")
    args = parser.parse_args(argv)
    serve(sys.stdin, sys.stdout, load_map(args.map),
          shuffle=args.shuffle,
          garbage_every=args.garbage_every,
          fail_substring=args.fail_substring,
          error_missing=args.error_missing)
    return 0


if __name__ == "__main__":
    sys.exit(main())
