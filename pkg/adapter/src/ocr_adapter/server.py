"""Line-JSON OCR service over stdio.

One request per input line, one reply per request, flushed immediately:
  request:  {"id": <int>, "image": "<path>", "segment": <bool>,
             "rotations": [0, 90, 180, 270]}
  reply:    {"id": <int>, "segments": [{"segment_index", "rotation_deg",
             "lines": [{"text", "confidence", "box": [[x, y] x4]}]}]}
  error:    {"id": <int>, "error": "<message>"}

segment=true proposes label regions and OCRs each crop at every
requested rotation (one segment entry per region/rotation pair;
whole image as the single region when nothing is proposed);
segment=false OCRs the whole image at every rotation. A bad request or
unreadable image produces an error reply and the stream continues.
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict

import numpy as np
from PIL import Image

from .config import AdapterConfig, parse_flags
from .ocr import recognize
from .segmentation import CROP_MARGIN_PX, MIN_AREA_PX, crop_mask, propose_masks

_ROTATION_CHOICES = (0, 90, 180, 270)


class BadRequest(ValueError):
    pass


def _parse_request(rec: dict) -> tuple[int, str, bool, list[int]]:
    image = rec.get("image")
    if not isinstance(image, str) or not image:
        raise BadRequest("field 'image' must be a non-empty string")
    segment = rec.get("segment")
    if not isinstance(segment, bool):
        raise BadRequest("field 'segment' must be a boolean")
    rotations = rec.get("rotations")
    if (not isinstance(rotations, list) or not rotations
            or not all(isinstance(r, int) and not isinstance(r, bool)
                       and r in _ROTATION_CHOICES for r in rotations)):
        raise BadRequest("field 'rotations' must be a non-empty list "
                         "drawn from 0/90/180/270")
    return rec["id"], image, segment, rotations


def _line_payload(line) -> dict:
    return {
        "text": line.text,
        "confidence": line.confidence,
        "box": [[float(x), float(y)] for x, y in line.box],
    }


def handle_request(rec: dict, config: AdapterConfig) -> dict:
    rid = rec.get("id")
    if not isinstance(rid, int) or isinstance(rid, bool):
        return {"id": None, "error": "field 'id' must be an integer"}
    try:
        rid, image_path, segment, rotations = _parse_request(rec)
        with Image.open(image_path) as img:
            gray = np.asarray(img.convert("L"), dtype=np.float64)
        if segment:
            crops = [crop_mask(gray, m)
                     for m in propose_masks(gray, config)]
            if not crops:
                crops = [gray]
        else:
            crops = [gray]
        segments = []
        for index, crop in enumerate(crops):
            for rot in rotations:
                lines = recognize(np.rot90(crop, k=rot // 90),
                                  config.ocr_engine_name)
                segments.append({
                    "segment_index": index,
                    "rotation_deg": rot,
                    "lines": [_line_payload(ln) for ln in lines],
                })
        return {"id": rid, "segments": segments}
    except BadRequest as exc:
        return {"id": rid, "error": str(exc)}
    except Exception as exc:  # one bad image must never kill the stream
        return {"id": rid, "error": f"{type(exc).__name__}: {exc}"}


def serve(stdin, stdout, config: AdapterConfig) -> int:
    """Answer requests until the input stream closes."""
    handled = 0
    for raw in stdin:
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            if not isinstance(rec, dict):
                raise ValueError("request must be a JSON object")
        except ValueError:
            reply = {"id": None, "error": "request is not a JSON object"}
        else:
            reply = handle_request(rec, config)
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
        handled += 1
    return handled


def main(argv=None) -> int:
    config = parse_flags(argv)
    banner = {k: getattr(v, "value", v) for k, v in asdict(config).items()}
    banner["crop_margin_px"] = CROP_MARGIN_PX
    banner["min_mask_area_px"] = MIN_AREA_PX
    print(f"ocr-adapter ready {json.dumps(banner, sort_keys=True)}",
          file=sys.stderr, flush=True)
    serve(sys.stdin, sys.stdout, config)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
