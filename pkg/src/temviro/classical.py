"""Classical candidate-proposal pipeline for intact particles.

The pipeline rests on one assumption: an intact particle is a circular,
bright object surrounded by a darker area. Stages, in order:

1. contrast stretch saturating the darkest/brightest 1% of intensities,
   then 15x15 median filtering,
2. masking of large bright areas (threshold + morphology + area gate) so
   the Hough stage can concentrate on particle-scale structures,
3. circular Hough transform with gradient voting,
4. rejection of candidates lacking a dark surround, by comparing the
   histogram mode of the square patch around each candidate with the
   median of the candidate's interior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import bit_depth, require_gray


@dataclass
class CandidateCircle:
    """Circle hypothesis in pixel units; score is accumulator strength."""

    cx: float
    cy: float
    r: float
    score: float = 0.0


@dataclass
class ClassicalParams:
    """Tunable knobs of the proposal pipeline with desk-scale defaults."""

    low_frac: float = 0.01
    high_frac: float = 0.01
    median_window: int = 15
    close_radius: int = 5
    area_min: float | None = None  # None: 4 * pi * r_max^2
    r_min: int = 10
    r_max: int = 20
    sensitivity: float = 0.5
    grad_percentile: float = 90.0
    delta_halo: int = 10

    def resolved_area_min(self) -> float:
        if self.area_min is not None:
            return self.area_min
        return 4.0 * math.pi * self.r_max ** 2


def stretch_contrast(img: np.ndarray, low_frac: float = 0.01, high_frac: float = 0.01) -> np.ndarray:
    """Linear stretch saturating the low_frac darkest and high_frac brightest pixels.

    Cut levels come from the image histogram: the low cut is the first
    intensity whose cumulative count exceeds low_frac * N, the high cut the
    first whose cumulative count reaches (1 - high_frac) * N. Values at or
    below the low cut map to 0, at or above the high cut to full scale,
    linear in between. A constant image is returned unchanged.
    """
    require_gray(img)
    if not (0.0 <= low_frac and 0.0 <= high_frac and low_frac + high_frac < 1.0):
        raise ValueError("need 0 <= low_frac + high_frac < 1")
    maxval = 2 ** bit_depth(img) - 1
    hist = np.bincount(img.ravel(), minlength=maxval + 1)
    cdf = np.cumsum(hist)
    n = img.size
    v_lo = int(np.argmax(cdf > low_frac * n))
    v_hi = int(np.argmax(cdf >= (1.0 - high_frac) * n))
    if v_hi <= v_lo:
        return img.copy()
    levels = np.arange(maxval + 1, dtype=np.float64)
    lut = np.rint((levels - v_lo) * maxval / (v_hi - v_lo))
    lut = np.clip(lut, 0, maxval).astype(img.dtype)
    return lut[img]


def median_filter(img: np.ndarray, window: int = 15) -> np.ndarray:
    """Square-window median with replicate border padding."""
    require_gray(img)
    if window < 1 or window % 2 == 0:
        raise ValueError("median window must be odd and >= 1")
    if window == 1:
        return img.copy()
    return ndimage.median_filter(img, size=window, mode="nearest")


def otsu_threshold(img: np.ndarray) -> int:
    """Otsu's threshold on the intensity histogram; foreground is > t."""
    require_gray(img)
    maxval = 2 ** bit_depth(img) - 1
    hist = np.bincount(img.ravel(), minlength=maxval + 1).astype(np.float64)
    levels = np.arange(maxval + 1, dtype=np.float64)
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    s0 = np.cumsum(hist * levels)
    s1 = s0[-1] - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = s0 / w0
        mu1 = s1 / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = 0.0
    return int(np.argmax(between))


def _disc_structure(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return (yy * yy + xx * xx) <= radius * radius


EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)

# Votes an ideal mid-radius circle deposits in a peak's 3x3 window, per
# perimeter unit (edge band ~2 px wide x ~3 capturing radius steps).
_PEAK_WINDOW_GAIN = 6.0


def mask_bright_regions(
    img: np.ndarray,
    close_radius: int = 5,
    area_min: float | None = None,
    r_max: float = 20.0,
) -> np.ndarray:
    """Boolean mask of large bright areas (area above the gate).

    Otsu threshold, morphological closing with a disc element, then an
    area filter. Virus-sized bright discs fall below the default gate of
    4 * pi * r_max^2 and are left unmasked.
    """
    require_gray(img)
    if area_min is None:
        area_min = 4.0 * math.pi * r_max ** 2
    # Otsu undershoots when dark features dominate the histogram spread,
    # which would classify the whole background as "bright"; bright areas
    # are by definition brighter than the dominant background population,
    # so the threshold is clamped to sit above the median.
    maxval = 2 ** bit_depth(img) - 1
    t = max(otsu_threshold(img), int(np.median(img)) + max(2, maxval // 50))
    bright = img > t
    if close_radius > 0:
        bright = ndimage.binary_closing(bright, structure=_disc_structure(close_radius))
    labels, n = ndimage.label(bright, structure=EIGHT_CONNECTED)
    if n == 0:
        return np.zeros_like(bright)
    areas = np.bincount(labels.ravel())
    keep = areas > area_min
    keep[0] = False
    return keep[labels]


def hough_circles(
    img: np.ndarray,
    exclusion: np.ndarray | None,
    r_min: int,
    r_max: int,
    sensitivity: float = 0.5,
    grad_percentile: float = 90.0,
) -> list[CandidateCircle]:
    """Gradient-voting circular Hough transform for bright-on-dark circles.

    Edge pixels (Sobel magnitude above the given percentile, outside the
    exclusion mask) vote along their gradient direction, which for a
    bright object on a darker surround points inward, at every radius in
    [r_min, r_max]. Accumulator peaks above sensitivity times the
    theoretical ideal-circle peak survive non-maximum suppression with
    minimum center distance r_min; the radius of each peak is read off
    the mode of the radial distance histogram of its supporting edge
    pixels. Candidates are returned sorted by descending score.
    """
    require_gray(img)
    if not (0 < r_min < r_max):
        raise ValueError("need 0 < r_min < r_max")
    h, w = img.shape
    f = img.astype(np.float64)
    gx = ndimage.sobel(f, axis=1, mode="nearest")
    gy = ndimage.sobel(f, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    positive = mag > 0
    if exclusion is not None:
        positive &= ~exclusion
    if not positive.any():
        return []
    thr = np.percentile(mag[positive], grad_percentile)
    edges = positive & (mag >= thr) & (mag > 0)
    ys, xs = np.nonzero(edges)
    if len(ys) == 0:
        return []
    ux = gx[edges] / mag[edges]
    uy = gy[edges] / mag[edges]

    acc = np.zeros((h, w), dtype=np.float64)
    for r in range(r_min, r_max + 1):
        px = np.rint(xs + r * ux).astype(np.int64)
        py = np.rint(ys + r * uy).astype(np.int64)
        ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        np.add.at(acc, (py[ok], px[ok]), 1.0)

    # Score each cell by the votes inside its 3x3 neighborhood, so the
    # 1-2 px spread from gradient quantization does not dilute peaks.
    votes3 = ndimage.uniform_filter(acc, size=3, mode="constant") * 9.0
    # Theoretical peak for an ideal circle of the mid radius: its Sobel
    # edge band is ~2 px wide (2 rings of perimeter pixels) and ~3 of the
    # integer radius steps land a vote inside the 3x3 peak window.
    r_mid = 0.5 * (r_min + r_max)
    theoretical_max = _PEAK_WINDOW_GAIN * 2.0 * math.pi * r_mid
    threshold = sensitivity * theoretical_max
    cand_cells = np.argwhere(votes3 >= threshold)
    if len(cand_cells) == 0:
        return []
    scores = votes3[cand_cells[:, 0], cand_cells[:, 1]]
    order = np.lexsort((cand_cells[:, 1], cand_cells[:, 0], -scores))
    cand_cells = cand_cells[order]
    scores = scores[order]

    accepted: list[tuple[float, float, float]] = []  # (cy, cx, score)
    min_d2 = float(r_min) ** 2
    for (py, px), s in zip(cand_cells, scores):
        if all((py - ay) ** 2 + (px - ax) ** 2 >= min_d2 for ay, ax, _ in accepted):
            accepted.append((float(py), float(px), float(s)))

    out: list[CandidateCircle] = []
    exs = xs.astype(np.float64)
    eys = ys.astype(np.float64)
    for py, px, s in accepted:
        # Subpixel center: vote centroid in a 5x5 window around the peak.
        y0, y1 = max(int(py) - 2, 0), min(int(py) + 3, h)
        x0, x1 = max(int(px) - 2, 0), min(int(px) + 3, w)
        win = acc[y0:y1, x0:x1]
        total = win.sum()
        if total > 0:
            wy, wx = np.mgrid[y0:y1, x0:x1]
            cy = float((win * wy).sum() / total)
            cx = float((win * wx).sum() / total)
        else:
            cy, cx = py, px
        # Radius from supporting edge pixels: those whose gradient points
        # at this center and whose distance lies in the search band.
        dx = cx - exs
        dy = cy - eys
        dist = np.hypot(dx, dy)
        near = (dist >= r_min - 1.5) & (dist <= r_max + 1.5) & (dist > 0)
        if not near.any():
            continue
        align = (dx[near] * ux[near] + dy[near] * uy[near]) / dist[near]
        good = align > 0.8
        if not good.any():
            continue
        d_good = dist[near][good]
        bins = np.bincount(np.rint(d_good).astype(int))
        mode = int(np.argmax(bins))
        sel = np.abs(d_good - mode) <= 1.0
        radius = float(d_good[sel].mean()) if sel.any() else float(mode)
        out.append(CandidateCircle(cx=cx, cy=cy, r=radius, score=s))

    out.sort(key=lambda c: (-c.score, c.cy, c.cx))
    return out


def dark_halo_filter(
    img: np.ndarray,
    candidates: list[CandidateCircle],
    delta_halo: int = 10,
) -> list[CandidateCircle]:
    """Keep candidates whose surround is darker than their interior.

    For each candidate the square patch of side 3r centered on it (clipped
    to the image) is split into the disc interior and the rest; the
    candidate survives iff the histogram mode of the surround is at most
    median(interior) - delta_halo. Mode ties break toward the darker bin.
    """
    require_gray(img)
    h, w = img.shape
    kept = []
    for c in candidates:
        half = 1.5 * c.r
        y0 = max(int(math.floor(c.cy - half)), 0)
        y1 = min(int(math.ceil(c.cy + half)) + 1, h)
        x0 = max(int(math.floor(c.cx - half)), 0)
        x1 = min(int(math.ceil(c.cx + half)) + 1, w)
        if y0 >= y1 or x0 >= x1:
            continue
        patch = img[y0:y1, x0:x1]
        yy, xx = np.mgrid[y0:y1, x0:x1]
        inside = ((xx - c.cx) ** 2 + (yy - c.cy) ** 2) < c.r ** 2
        interior = patch[inside]
        surround = patch[~inside]
        if interior.size == 0 or surround.size == 0:
            continue
        interior_median = float(np.median(interior))
        mode = int(np.argmax(np.bincount(surround.ravel(), minlength=256)))
        if mode <= interior_median - delta_halo:
            kept.append(c)
    return kept


def propose_candidates(img: np.ndarray, params: ClassicalParams | None = None) -> list[CandidateCircle]:
    """Full proposal pipeline on an 8-bit image."""
    require_gray(img)
    if bit_depth(img) != 8:
        raise ValueError("proposal pipeline expects an 8-bit image")
    p = params or ClassicalParams()
    stretched = stretch_contrast(img, p.low_frac, p.high_frac)
    filtered = median_filter(stretched, p.median_window)
    exclusion = mask_bright_regions(
        filtered, close_radius=p.close_radius, area_min=p.resolved_area_min(), r_max=p.r_max
    )
    cands = hough_circles(
        filtered, exclusion, p.r_min, p.r_max, p.sensitivity, p.grad_percentile
    )
    return dark_halo_filter(filtered, cands, p.delta_halo)
