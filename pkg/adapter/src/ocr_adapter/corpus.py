"""Mini corpus of synthetic device-label photos with known addresses.

Twenty photos spanning the bundled faces, type sizes down to 16 px, the
three common address notations, all four orientations, and two noisy
low-contrast stragglers. labels.json records the ground truth for each
file so recognition accuracy is checkable offline.
"""

from __future__ import annotations

import argparse
import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .ocr import find_font

IMAGE_W, IMAGE_H = 640, 360

# (face, type size, rotation deg, address notation, noise sigma, contrast)
RECIPES = [
    ("mono", 30, 0, "colon", 0.0, 1.0),
    ("mono", 28, 0, "colon", 0.0, 1.0),
    ("mono", 26, 0, "hyphen", 0.0, 1.0),
    ("mono", 24, 0, "colon", 0.0, 1.0),
    ("mono", 22, 0, "bare", 0.0, 1.0),
    ("mono", 20, 0, "colon", 0.0, 1.0),
    ("mono", 18, 0, "hyphen", 0.0, 1.0),
    ("mono", 16, 0, "colon", 0.0, 1.0),
    ("sans", 30, 0, "colon", 0.0, 1.0),
    ("sans", 26, 0, "hyphen", 0.0, 1.0),
    ("sans", 22, 0, "colon", 0.0, 1.0),
    ("sans", 18, 0, "bare", 0.0, 1.0),
    ("sans-bold", 28, 0, "colon", 0.0, 1.0),
    ("sans-bold", 24, 0, "colon", 0.0, 1.0),
    ("sans-bold", 20, 0, "hyphen", 0.0, 1.0),
    ("mono", 22, 90, "colon", 0.0, 1.0),
    ("mono", 22, 180, "colon", 0.0, 1.0),
    ("mono", 22, 270, "colon", 0.0, 1.0),
    ("mono", 18, 0, "colon", 6.0, 0.55),
    ("sans", 16, 0, "colon", 4.0, 0.7),
]

_OUIS = ("3c22fb", "a02bca", "0018e7", "9cf48e", "44fb5a")
_BRANDS = ("ACME NETWORKS", "NORTHGRID", "LUMAWAVE", "PARKSIDE LABS")
_MODELS = ("AP-210", "WR-550X", "MESH-3", "RANGER/2")


@dataclass(frozen=True)
class CorpusImage:
    file: str
    mac: str  # canonical 12 lowercase hex
    face: str
    size_px: int
    rotation_deg: int
    notation: str
    noise_sigma: float
    contrast: float


def _format_mac(canonical: str, notation: str) -> str:
    pairs = [canonical[i:i + 2].upper() for i in range(0, 12, 2)]
    if notation == "colon":
        return ":".join(pairs)
    if notation == "hyphen":
        return "-".join(pairs)
    if notation == "bare":
        return "".join(pairs)
    raise ValueError(f"unknown notation {notation!r}")


def _render(recipe, mac: str, rng: random.Random) -> Image.Image:
    face, size, rotation, notation, sigma, contrast = recipe
    bg = 52
    label_tone = 222
    text_tone = 24
    if contrast < 1.0:
        spread = (label_tone - text_tone) * contrast
        mid = (label_tone + text_tone) / 2
        label_tone = int(mid + spread / 2)
        text_tone = int(mid - spread / 2)
    img = Image.new("L", (IMAGE_W, IMAGE_H), bg)
    draw = ImageDraw.Draw(img)
    font = ImageFont.truetype(str(find_font(face)), size)
    lines = [
        rng.choice(_BRANDS),
        f"MODEL {rng.choice(_MODELS)}",
        f"MAC: {_format_mac(mac, notation)}",
        f"SN {rng.randrange(10000, 99999)}-{rng.randrange(10, 99)}",
    ]
    gap = max(6, size // 2)
    sizes = [draw.textbbox((0, 0), ln, font=font) for ln in lines]
    widths = [b[2] - b[0] for b in sizes]
    heights = [b[3] - b[1] for b in sizes]
    text_w = max(widths)
    text_h = sum(heights) + gap * (len(lines) - 1)
    pad = 18
    lx0 = (IMAGE_W - text_w) // 2 - pad
    ly0 = (IMAGE_H - text_h) // 2 - pad
    lx1 = (IMAGE_W + text_w) // 2 + pad
    ly1 = (IMAGE_H + text_h) // 2 + pad
    draw.rectangle((lx0, ly0, lx1, ly1), fill=label_tone)
    y = (IMAGE_H - text_h) // 2
    for ln, bbox, h in zip(lines, sizes, heights):
        x = (IMAGE_W - (bbox[2] - bbox[0])) // 2 - bbox[0]
        draw.text((x, y - bbox[1]), ln, fill=text_tone, font=font)
        y += h + gap
    if rotation:
        img = img.rotate(rotation, expand=True, fillcolor=bg)
    if sigma > 0:
        noise_rng = np.random.default_rng(rng.randrange(2 ** 32))
        arr = np.asarray(img, dtype=np.float64)
        arr += noise_rng.normal(0.0, sigma, arr.shape)
        img = Image.fromarray(np.clip(arr, 0, 255).astype(np.uint8))
    return img


def build_corpus(dest: str | Path, seed: int = 7) -> list[CorpusImage]:
    """Write the images and labels.json; returns the manifest."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    manifest = []
    for n, recipe in enumerate(RECIPES):
        face, size, rotation, notation, sigma, contrast = recipe
        mac = (rng.choice(_OUIS)
               + "".join(rng.choice("0123456789abcdef") for _ in range(6)))
        entry = CorpusImage(
            file=f"label{n:02d}.png", mac=mac, face=face, size_px=size,
            rotation_deg=rotation, notation=notation,
            noise_sigma=sigma, contrast=contrast,
        )
        _render(recipe, mac, rng).save(dest / entry.file)
        manifest.append(entry)
    payload = [vars(e) for e in manifest]
    (dest / "labels.json").write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return manifest


def load_labels(corpus_dir: str | Path) -> list[CorpusImage]:
    text = (Path(corpus_dir) / "labels.json").read_text(encoding="utf-8")
    return [CorpusImage(**rec) for rec in json.loads(text)]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Generate the bundled labeled mini corpus.")
    parser.add_argument("--dest", required=True)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    manifest = build_corpus(args.dest, seed=args.seed)
    print(f"corpus: {len(manifest)} images -> {args.dest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
