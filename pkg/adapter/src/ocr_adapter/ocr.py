"""Printed-label OCR by glyph template matching.

Scope: clean printed type on device labels (the uppercase/digit/punct
charset below), any size, black-on-light or light-on-dark. Characters
are isolated as connected components, size-normalized, and scored by
normalized cross-correlation against templates rasterized from bundled
fonts; confidence is the winning correlation.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy import ndimage

CHARSET = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ:-./"
CELL_W, CELL_H = 24, 32
# Rasterizer hinting changes glyph shapes with point size, so one template
# per size is not enough; a small size ladder keeps 0/O and D/O apart.
_REF_PTS = (14, 16, 18, 22, 26, 30, 40)
_MIN_COMPONENT_PX = 4
_EIGHT = ndimage.generate_binary_structure(2, 2)

_FONT_DIRS = (
    Path("/usr/share/fonts/truetype/dejavu"),
)

_FACES = {
    "mono": "DejaVuSansMono.ttf",
    "sans": "DejaVuSans.ttf",
    "sans-bold": "DejaVuSans-Bold.ttf",
}


@dataclass(frozen=True)
class Line:
    text: str
    confidence: float
    box: tuple[tuple[float, float], ...]  # 4 corners, crop coordinates


def find_font(face: str) -> Path:
    name = _FACES[face]
    for d in _FONT_DIRS:
        p = d / name
        if p.is_file():
            return p
    try:  # matplotlib bundles the same faces
        import matplotlib
        p = Path(matplotlib.get_data_path()) / "fonts" / "ttf" / name
        if p.is_file():
            return p
    except ImportError:
        pass
    raise FileNotFoundError(f"no bundled font file for face {face!r}")


def _normalize_cell(ink: np.ndarray) -> tuple[np.ndarray, float] | None:
    """Tight ink mask -> (flat float vector in a fixed aspect-true box,
    log aspect ratio of the tight box)."""
    ys, xs = np.nonzero(ink)
    if ys.size == 0:
        return None
    tight = ink[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    h, w = tight.shape
    scale = min(CELL_W / w, CELL_H / h)
    tw = max(1, int(round(w * scale)))
    th = max(1, int(round(h * scale)))
    img = Image.fromarray((tight * 255).astype(np.uint8))
    img = img.resize((tw, th), Image.BILINEAR)
    cell = np.zeros((CELL_H, CELL_W), dtype=np.float32)
    oy = (CELL_H - th) // 2
    ox = (CELL_W - tw) // 2
    cell[oy:oy + th, ox:ox + tw] = np.asarray(img, dtype=np.float32) / 255.0
    flat = cell.reshape(-1)
    flat = flat - flat.mean()
    # A solid block that happens to fill the whole box has no contrast left
    # after mean centering; treat it as unreadable rather than poison the
    # correlation with a zero norm.
    if float(np.linalg.norm(flat)) < 1e-6:
        return None
    return flat, math.log(w / h)


class GlyphSet:
    """Stacked, mean-centered glyph templates for vectorized scoring."""

    # Correlation alone cannot separate near-identical outlines such as 0/O
    # once both are stretched into the same box; the tight-box aspect ratio
    # caught before stretching is the discriminating feature, weighted here.
    ASPECT_WEIGHT = 0.25

    def __init__(self, faces: tuple[str, ...]):
        vectors = []
        aspects = []
        chars = []
        for face in faces:
            path = str(find_font(face))
            for ref_pt in _REF_PTS:
                font = ImageFont.truetype(path, ref_pt)
                for ch in CHARSET:
                    canvas = Image.new("L", (ref_pt * 3, ref_pt * 3), 255)
                    ImageDraw.Draw(canvas).text((ref_pt, ref_pt), ch,
                                                fill=0, font=font)
                    ink = np.asarray(canvas) < 128
                    normalized = _normalize_cell(ink)
                    if normalized is None:
                        # degenerate at this size; another size covers it
                        continue
                    vec, log_aspect = normalized
                    vectors.append(vec)
                    aspects.append(log_aspect)
                    chars.append(ch)
        if not vectors:
            raise ValueError(f"no usable glyph templates for faces {faces!r}")
        self.matrix = np.stack(vectors)
        self.norms = np.linalg.norm(self.matrix, axis=1)
        self.aspects = np.asarray(aspects)
        self.chars = chars

    def classify(self, ink: np.ndarray) -> tuple[str, float] | None:
        normalized = _normalize_cell(ink)
        if normalized is None:
            return None
        vec, log_aspect = normalized
        norm = np.linalg.norm(vec)
        if norm == 0:
            return None
        ncc = (self.matrix @ vec) / (self.norms * norm)
        scores = ncc - self.ASPECT_WEIGHT * np.abs(self.aspects - log_aspect)
        best = int(np.argmax(scores))
        return self.chars[best], float(np.clip(ncc[best], 0.0, 1.0))


@functools.lru_cache(maxsize=None)
def glyph_set(engine_name: str) -> GlyphSet:
    if engine_name == "glyph-mono":
        return GlyphSet(("mono",))
    if engine_name == "glyph-multi":
        return GlyphSet(("mono", "sans", "sans-bold"))
    raise ValueError(f"unknown ocr engine {engine_name!r}")


def _otsu(values: np.ndarray) -> float:
    hist, edges = np.histogram(values, bins=256, range=(0.0, 255.0))
    total = hist.sum()
    if total == 0:
        return 127.5
    centers = (edges[:-1] + edges[1:]) / 2.0
    w0 = np.cumsum(hist.astype(np.float64))
    w1 = total - w0
    mass = np.cumsum(hist * centers)
    mean0 = np.divide(mass, w0, out=np.zeros_like(mass), where=w0 > 0)
    mean1 = np.divide(mass[-1] - mass, w1,
                      out=np.zeros_like(mass), where=w1 > 0)
    return float(centers[int(np.argmax(w0 * w1 * (mean0 - mean1) ** 2))])


def _ink_mask(gray: np.ndarray) -> np.ndarray | None:
    if gray.size == 0 or float(gray.std()) < 1e-6:
        return None
    ink = gray < _otsu(gray.astype(np.float64))
    if float(ink.mean()) > 0.5:  # light type on dark ground
        ink = ~ink
    # heal anti-aliasing breaks in thin strokes; vertical-only so tight
    # neighbor glyphs are not bridged into one component
    ink = ndimage.binary_closing(ink, structure=np.ones((2, 1), bool))
    # drop border-connected blobs: crop margins bring a frame of ground
    # around the label, and type never touches the crop edge
    labels, _ = ndimage.label(ink, structure=_EIGHT)
    border_ids = np.unique(np.concatenate([
        labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]]))
    border_ids = border_ids[border_ids > 0]
    if border_ids.size:
        ink &= ~np.isin(labels, border_ids)
    return ink


def _row_bands(ink: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of inked rows, bridging gaps of up to 2 blank rows."""
    rows = ink.any(axis=1)
    bands: list[list[int]] = []
    for y, on in enumerate(rows):
        if not on:
            continue
        if bands and y - bands[-1][1] <= 3:
            bands[-1][1] = y
        else:
            bands.append([y, y])
    return [(a, b + 1) for a, b in bands]


@dataclass
class _Cell:
    x0: int
    x1: int
    y0: int
    y1: int
    ids: set[int]

    def absorb(self, other: "_Cell") -> None:
        self.x0 = min(self.x0, other.x0)
        self.x1 = max(self.x1, other.x1)
        self.y0 = min(self.y0, other.y0)
        self.y1 = max(self.y1, other.y1)
        self.ids |= other.ids

    @property
    def width(self) -> int:
        return self.x1 - self.x0


def _cells_of_band(components: list[_Cell]) -> list[_Cell]:
    """Merge vertically stacked pieces (colon dots, broken strokes)."""
    cells: list[_Cell] = []
    for comp in sorted(components, key=lambda c: (c.x0, c.y0)):
        for cell in cells:
            overlap = min(cell.x1, comp.x1) - max(cell.x0, comp.x0)
            narrow = max(1, min(cell.width, comp.width))
            if overlap / narrow >= 0.5:
                cell.absorb(comp)
                break
        else:
            cells.append(comp)
    cells.sort(key=lambda c: c.x0)
    return cells


# Letters that the correlation stage cannot reliably keep apart from hex
# digits in these faces. Hex letters (A-F) are never folded.
_CONFUSABLE_TO_HEX = str.maketrans("OQILoqil", "00110011")
_HEXISH = "[0-9A-Fa-fOQILoqil]"
_MAC_SHAPE = re.compile(
    r"(?<![0-9A-Za-z])(?=("
    + _HEXISH + "{2}"
    + (r"[\s:.\-]{0,3}" + _HEXISH + "{2}") * 5
    + r"(?![0-9A-Za-z])))"
)


def _fold_mac_confusables(text: str) -> str:
    """Inside windows shaped like a MAC address, fold 0/O-class lookalikes
    to the digit; single glyphs do not carry enough signal to decide, the
    surrounding address pattern does."""
    out = list(text)
    for match in _MAC_SHAPE.finditer(text):
        start = match.start(1)
        for offset, ch in enumerate(match.group(1)):
            folded = ch.translate(_CONFUSABLE_TO_HEX)
            if folded != ch:
                out[start + offset] = folded
    return "".join(out)


def recognize(gray: np.ndarray, engine_name: str = "glyph-multi"
              ) -> list[Line]:
    """OCR one crop: text lines top to bottom, characters left to right."""
    ink = _ink_mask(np.asarray(gray, dtype=np.float64))
    if ink is None:
        return []
    labels, n = ndimage.label(ink, structure=_EIGHT)
    if n == 0:
        return []
    bands = _row_bands(ink)
    if not bands:
        return []
    per_band: list[list[_Cell]] = [[] for _ in bands]
    for label_id, sl in enumerate(ndimage.find_objects(labels), start=1):
        comp = _Cell(x0=sl[1].start, x1=sl[1].stop,
                     y0=sl[0].start, y1=sl[0].stop, ids={label_id})
        if (comp.x1 - comp.x0) * (comp.y1 - comp.y0) < _MIN_COMPONENT_PX:
            continue
        center = (comp.y0 + comp.y1) / 2.0
        best = min(range(len(bands)),
                   key=lambda i: (0 if bands[i][0] <= center < bands[i][1]
                                  else min(abs(center - bands[i][0]),
                                           abs(center - bands[i][1]))))
        per_band[best].append(comp)
    glyphs = glyph_set(engine_name)
    lines: list[Line] = []
    for band_cells in per_band:
        if not band_cells:
            continue
        cells = _cells_of_band(band_cells)
        hits: list[tuple[_Cell, str, float]] = []
        for cell in cells:
            patch = labels[cell.y0:cell.y1, cell.x0:cell.x1]
            hit = glyphs.classify(np.isin(patch, sorted(cell.ids)))
            if hit is not None:
                hits.append((cell, hit[0], hit[1]))
        if not hits:
            continue
        # Word breaks from advance (center-to-center) gaps, not ink gaps:
        # narrow glyphs such as ':' leave wide ink gaps at a normal advance.
        centers = [(c.x0 + c.x1) / 2.0 for c, _, _ in hits]
        gaps = sorted(b - a for a, b in zip(centers, centers[1:]))
        median_gap = gaps[len(gaps) // 2] if gaps else 0.0
        parts: list[str] = []
        scores: list[float] = []
        for i, (cell, ch, score) in enumerate(hits):
            if i > 0 and median_gap > 0 \
                    and centers[i] - centers[i - 1] > 1.6 * median_gap:
                parts.append(" ")
            parts.append(ch)
            scores.append(score)
        x0 = float(min(c.x0 for c in cells))
        x1 = float(max(c.x1 for c in cells))
        y0 = float(min(c.y0 for c in cells))
        y1 = float(max(c.y1 for c in cells))
        lines.append(Line(
            text=_fold_mac_confusables("".join(parts)),
            confidence=float(sum(scores) / len(scores)),
            box=((x0, y0), (x1, y0), (x1, y1), (x0, y1)),
        ))
    return lines
