"""Post-processing of segmentation masks into countable detections.

The mask cleanup chain is binary median filtering (speck removal)
followed by dilation with a disc element (outline improvement); cleaned
masks are then decomposed into 8-connected components, gated by area,
and summarized as instances. Overlays burn instance or circle outlines
into an RGB copy for reports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import require_mask

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def _disc_structure(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return (yy * yy + xx * xx) <= radius * radius


@dataclass
class DetectedInstance:
    """One connected detection: run-length pixel spans plus summary stats."""

    instance_id: int
    spans: list  # of (row, col_start, col_end) half-open column ranges
    cx: float
    cy: float
    area: int

    @property
    def equiv_radius(self) -> float:
        return math.sqrt(self.area / math.pi)

    def to_mask(self, height: int, width: int) -> np.ndarray:
        m = np.zeros((height, width), dtype=bool)
        for row, c0, c1 in self.spans:
            m[row, c0:c1] = True
        return m


def clean_mask(mask: np.ndarray, median_window: int = 5, dilate_radius: int = 2) -> np.ndarray:
    """Binary median filter then disc dilation; output stays binary."""
    require_mask(mask)
    out = mask.astype(bool)
    if median_window > 1:
        if median_window % 2 == 0:
            raise ValueError("median window must be odd")
        # Median of a binary image is a majority vote over the window.
        counts = ndimage.uniform_filter(
            out.astype(np.float32), size=median_window, mode="nearest"
        )
        out = counts > 0.5
    if dilate_radius > 0:
        out = ndimage.binary_dilation(out, structure=_disc_structure(dilate_radius))
    return out.astype(np.uint8)


def _spans_from_component(component: np.ndarray, y0: int, x0: int) -> list:
    spans = []
    for row in range(component.shape[0]):
        line = component[row]
        diff = np.diff(np.concatenate([[0], line.view(np.int8), [0]]))
        starts = np.nonzero(diff == 1)[0]
        ends = np.nonzero(diff == -1)[0]
        for s, e in zip(starts, ends):
            spans.append((y0 + row, x0 + int(s), x0 + int(e)))
    return spans


def extract_instances(
    mask: np.ndarray,
    area_min: float = 0.0,
    area_max: float = float("inf"),
) -> list[DetectedInstance]:
    """8-connected components of a binary mask, filtered by area.

    Instances are sorted by centroid (cy, cx) and numbered from 0 in that
    order; centroids are plain pixel means.
    """
    require_mask(mask)
    labels, n = ndimage.label(mask.astype(bool), structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    objects = ndimage.find_objects(labels)
    raw = []
    for li, sl in enumerate(objects, start=1):
        component = labels[sl] == li
        area = int(component.sum())
        if not (area_min <= area <= area_max):
            continue
        ys, xs = np.nonzero(component)
        cy = float(ys.mean() + sl[0].start)
        cx = float(xs.mean() + sl[1].start)
        raw.append((cy, cx, area, _spans_from_component(component, sl[0].start, sl[1].start)))
    raw.sort(key=lambda t: (t[0], t[1]))
    return [
        DetectedInstance(instance_id=i, spans=spans, cx=cx, cy=cy, area=area)
        for i, (cy, cx, area, spans) in enumerate(raw)
    ]


def write_instances(instances: list[DetectedInstance], path: str) -> None:
    """Instance list as JSON lines {id, cx, cy, area, equiv_radius}."""
    with open(path, "w") as f:
        for inst in instances:
            f.write(json.dumps({
                "id": inst.instance_id,
                "cx": inst.cx,
                "cy": inst.cy,
                "area": inst.area,
                "equiv_radius": inst.equiv_radius,
            }) + "\n")


def _to_rgb(img: np.ndarray) -> np.ndarray:
    if img.dtype == np.uint16:
        img = np.rint(img.astype(np.float64) * 255.0 / 65535.0).astype(np.uint8)
    return np.repeat(img[:, :, None], 3, axis=2)


def burn_overlay(img: np.ndarray, items, color=(255, 64, 64)) -> np.ndarray:
    """Burn outlines into an RGB copy of the image; the source is untouched.

    items may be DetectedInstance objects (component boundaries are drawn)
    or circle-like objects with cx/cy/r attributes (a one-pixel ring is
    drawn).
    """
    h, w = img.shape
    rgb = _to_rgb(img)
    outline = np.zeros((h, w), dtype=bool)
    for item in items:
        if isinstance(item, DetectedInstance):
            m = item.to_mask(h, w)
            outline |= m & ~ndimage.binary_erosion(m, structure=EIGHT_CONNECTED)
        else:
            yy, xx = np.mgrid[0:h, 0:w]
            d = np.hypot(xx - item.cx, yy - item.cy)
            outline |= np.abs(d - item.r) <= 0.75
    rgb[outline] = color
    return rgb
