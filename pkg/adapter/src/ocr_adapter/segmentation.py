"""Label-region proposal: bright rectangular regions on darker ground.

A stand-in for a promptable mask generator that is deterministic and
CPU-cheap: global threshold, connected components, largest-first. Masks
become tight bounding-box crops with a 4 pixel margin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import AdapterConfig, ModelSize

CROP_MARGIN_PX = 4
# a label crop smaller than this cannot hold readable type
MIN_AREA_PX = 400

_EIGHT = ndimage.generate_binary_structure(2, 2)


@dataclass(frozen=True)
class Mask:
    """One proposed region: bbox in full-image pixel coordinates."""

    x0: int
    y0: int
    x1: int  # exclusive
    y1: int  # exclusive
    area: int


def _threshold_otsu(gray: np.ndarray) -> float:
    hist, edges = np.histogram(gray, bins=256, range=(0.0, 255.0))
    total = hist.sum()
    if total == 0:
        return 127.5
    centers = (edges[:-1] + edges[1:]) / 2.0
    weight = hist.astype(np.float64)
    w0 = np.cumsum(weight)
    w1 = total - w0
    mass = np.cumsum(weight * centers)
    mean0 = np.divide(mass, w0, out=np.zeros_like(mass), where=w0 > 0)
    mean1 = np.divide(mass[-1] - mass, w1,
                      out=np.zeros_like(mass), where=w1 > 0)
    var_between = w0 * w1 * (mean0 - mean1) ** 2
    return float(centers[int(np.argmax(var_between))])


def propose_masks(gray: np.ndarray, config: AdapterConfig) -> list[Mask]:
    """Largest-first bright-region proposals, capped at max_segments."""
    if gray.size == 0:
        return []
    work = gray.astype(np.float64)
    scale = 2 if config.segmentation_model_size is ModelSize.SMALL else 1
    if scale > 1:
        work = work[::scale, ::scale]
    if float(work.std()) < 1e-6:
        return []
    thr = _threshold_otsu(work)
    bright = work > thr
    labels, n = ndimage.label(bright, structure=_EIGHT)
    if n == 0:
        return []
    areas = ndimage.sum_labels(np.ones_like(labels), labels,
                               index=np.arange(1, n + 1))
    slices = ndimage.find_objects(labels)
    masks = []
    min_area = MIN_AREA_PX / (scale * scale)
    for idx in np.argsort(-areas):
        if areas[idx] < min_area:
            continue
        sl = slices[idx]
        masks.append(Mask(
            x0=sl[1].start * scale, y0=sl[0].start * scale,
            x1=sl[1].stop * scale, y1=sl[0].stop * scale,
            area=int(areas[idx]) * scale * scale,
        ))
        if len(masks) == config.max_segments:
            break
    return masks


def crop_mask(gray: np.ndarray, mask: Mask,
              margin: int = CROP_MARGIN_PX) -> np.ndarray:
    h, w = gray.shape
    y0 = max(0, mask.y0 - margin)
    x0 = max(0, mask.x0 - margin)
    y1 = min(h, mask.y1 + margin)
    x1 = min(w, mask.x1 + margin)
    return gray[y0:y1, x0:x1]
