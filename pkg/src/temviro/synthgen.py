"""Synthetic TEM-like scene generator with exact ground truth.

Scenes contain four confuser populations alongside the detection target:

* intact particles: bright discs with a darker surrounding halo and faint
  interior speckle (the only population present in the ground truth),
* broken particles: bright arc fragments without a closed halo,
* small debris: few-pixel specks,
* large debris: irregular particle-scale blobs without a halo,
* staining artefacts: large low-frequency dark or bright patches.

Everything is a pure function of the scene spec: the same spec produces
byte-identical images on any platform (SplitMix64 + Box-Muller, fixed
draw order).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .classical import CandidateCircle
from .raster import rasterize_disc, write_image
from .rng import SplitMix64, derive_seed

PLACEMENT_ATTEMPTS = 10_000


@dataclass
class SceneSpec:
    """Recipe for one synthetic scene."""

    width: int = 512
    height: int = 512
    n_intact: int = 5
    n_broken: int = 3
    n_small_debris: int = 10
    n_large_debris: int = 4
    n_artefacts: int = 2
    radius_mean: float = 15.0
    radius_sd: float = 1.5
    halo_width: float = 5.0
    background_level: int = 150
    particle_level: int = 220
    noise_sd: float = 5.0
    min_separation: float = 50.0
    seed: int = 0

    def validate(self) -> "SceneSpec":
        if self.width < 1 or self.height < 1:
            raise ValueError("zero-sized image")
        counts = (self.n_intact, self.n_broken, self.n_small_debris,
                  self.n_large_debris, self.n_artefacts)
        if any(c < 0 for c in counts):
            raise ValueError("object counts must be >= 0")
        if not (self.radius_mean > self.halo_width > 0):
            raise ValueError("need radius_mean > halo_width > 0")
        if not (0 <= self.background_level <= 255 and 0 <= self.particle_level <= 255):
            raise ValueError("intensity levels must lie in [0, 255]")
        if self.particle_level <= self.background_level:
            raise ValueError("particle_level must exceed background_level")
        return self

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        return cls(**d).validate()


@dataclass
class SceneTruth:
    """Exact ground truth for a generated scene."""

    intact_circles: list = field(default_factory=list)  # of CandidateCircle
    mask: np.ndarray | None = None  # uint8 {0,1}, union of rasterized discs


def _bilinear_upsample(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    gh, gw = grid.shape
    ys = np.linspace(0.0, gh - 1.0, out_h)
    xs = np.linspace(0.0, gw - 1.0, out_w)
    y0 = np.minimum(ys.astype(int), gh - 2)
    x0 = np.minimum(xs.astype(int), gw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = grid[y0][:, x0]
    b = grid[y0][:, x0 + 1]
    c = grid[y0 + 1][:, x0]
    d = grid[y0 + 1][:, x0 + 1]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


class _Placer:
    """Rejection sampler that keeps confusers clear of intact halos."""

    def __init__(self, spec: SceneSpec, rng: SplitMix64):
        self.spec = spec
        self.rng = rng
        self.intact: list[tuple[float, float, float]] = []  # (cx, cy, r)
        self.artefacts: list[tuple[float, float, float]] = []  # (cx, cy, extent)

    def place_intact(self, r: float) -> tuple[float, float]:
        spec = self.spec
        margin = r + spec.halo_width + 2.0
        if 2 * margin >= min(spec.width, spec.height):
            raise ValueError("intact particle does not fit in the image")
        for _ in range(PLACEMENT_ATTEMPTS):
            cx = self.rng.uniform_range(margin, spec.width - 1 - margin)
            cy = self.rng.uniform_range(margin, spec.height - 1 - margin)
            if all(math.hypot(cx - x, cy - y) >= spec.min_separation
                   for x, y, _ in self.intact):
                self.intact.append((cx, cy, r))
                return cx, cy
        raise ValueError("placement infeasible: too many rejected intact positions")

    def place_other(self, extent: float, separate_artefact: bool = False) -> tuple[float, float]:
        """Position for a non-intact object; must not touch any intact halo.

        Artefacts additionally keep clear of each other so two translucent
        stains never stack into a particle-contrast patch.
        """
        spec = self.spec
        margin = min(extent + 1.0, min(spec.width, spec.height) / 2.0 - 1.0)
        margin = max(margin, 0.0)
        for _ in range(PLACEMENT_ATTEMPTS):
            cx = self.rng.uniform_range(margin, spec.width - 1 - margin)
            cy = self.rng.uniform_range(margin, spec.height - 1 - margin)
            ok = all(
                math.hypot(cx - x, cy - y) >= r + spec.halo_width + extent + 3.0
                for x, y, r in self.intact
            )
            if ok and separate_artefact:
                ok = all(
                    math.hypot(cx - x, cy - y) >= 0.75 * (e + extent)
                    for x, y, e in self.artefacts
                )
            if ok:
                if separate_artefact:
                    self.artefacts.append((cx, cy, extent))
                return cx, cy
        raise ValueError("placement infeasible: too many rejected confuser positions")


def _paint_artefact(canvas: np.ndarray, rng: SplitMix64, placer: _Placer, spec: SceneSpec):
    size = int(rng.uniform_range(60, 140))
    size = min(size, min(spec.width, spec.height) - 2)
    cx, cy = placer.place_other(size / 2.0, separate_artefact=True)
    if rng.uniform() < 0.7:
        amp = rng.uniform_range(-55.0, -15.0)  # uranyl-stain pools read dark
    else:
        amp = rng.uniform_range(15.0, 35.0)
    coarse = rng.normal_field((7, 7))
    blob = _bilinear_upsample(coarse, size, size)
    # Radial taper keeps the patch compact before thresholding.
    yy, xx = np.mgrid[0:size, 0:size]
    d = np.hypot(yy - size / 2.0, xx - size / 2.0) / (size / 2.0)
    blob = blob + 1.2 * (1.0 - d)
    patch = blob > np.quantile(blob, 0.55)
    # Stains are low-frequency: a flat translucent interior with a wide
    # feathered skirt, so the patch has neither sharp edges nor internal
    # particle-scale structure.
    alpha = np.minimum(ndimage.gaussian_filter(patch.astype(np.float64), 6.0) * 1.8, 1.0)
    y0 = int(round(cy - size / 2.0))
    x0 = int(round(cx - size / 2.0))
    y0c, x0c = max(y0, 0), max(x0, 0)
    y1c, x1c = min(y0 + size, spec.height), min(x0 + size, spec.width)
    sub = alpha[y0c - y0:y1c - y0, x0c - x0:x1c - x0]
    canvas[y0c:y1c, x0c:x1c] += amp * sub


def _paint_large_debris(canvas, rng, placer, spec):
    """Irregular particle-scale clump: elongated chain of small rough lobes,
    no halo. Shape incoherence is what keeps the Hough stage from treating
    these as circles."""
    extent = spec.radius_mean * rng.uniform_range(0.7, 1.4)
    cx, cy = placer.place_other(extent * 1.8)
    level = spec.background_level + rng.uniform_range(-60.0, 25.0)
    axis = rng.uniform_range(0.0, 2 * math.pi)
    aspect = rng.uniform_range(2.2, 3.5)
    n_lobes = rng.randint(5, 8)
    for i in range(n_lobes):
        t = (i / max(n_lobes - 1, 1) - 0.5) * 2.0  # in [-1, 1] along the axis
        off = rng.uniform_range(-1.0, 1.0) * extent / aspect
        lx = cx + t * extent * math.cos(axis) - off * math.sin(axis)
        ly = cy + t * extent * math.sin(axis) + off * math.cos(axis)
        lr = (extent / aspect) * rng.uniform_range(0.4, 0.7)
        canvas[rasterize_disc(spec.height, spec.width, lx, ly, max(lr, 1.5))] = level


def _paint_broken(canvas, rng, placer, spec):
    r = spec.radius_mean * rng.uniform_range(0.8, 1.15)
    cx, cy = placer.place_other(r + 3.0)
    span = math.radians(rng.uniform_range(90.0, 270.0))
    start = rng.uniform_range(0.0, 2 * math.pi)
    thick = max(2.0, r / 4.5)
    jitter = [rng.normal(0.0, 1.2) for _ in range(48)]
    # Broken capsids fill with stain, so the inside reads darker than the
    # surround; that is what the dark-surround test keys on.
    fill_interior = True
    interior_level = spec.background_level - 25.0

    y0 = max(int(cy - r - 4), 0)
    y1 = min(int(cy + r + 5), spec.height)
    x0 = max(int(cx - r - 4), 0)
    x1 = min(int(cx + r + 5), spec.width)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy, dx = yy - cy, xx - cx
    d = np.hypot(dx, dy)
    ang = np.mod(np.arctan2(dy, dx) - start, 2 * math.pi)
    in_span = ang <= span
    bins = np.minimum((ang / (2 * math.pi) * 48).astype(int), 47)
    jit = np.asarray(jitter)[bins]
    shell = in_span & (np.abs(d - r) < thick / 2.0 + jit)
    region = canvas[y0:y1, x0:x1]
    if fill_interior:
        region[in_span & (d < r - thick / 2.0)] = interior_level
    region[shell] = spec.particle_level - 8.0


def _paint_small_debris(canvas, rng, placer, spec):
    r = rng.uniform_range(0.8, 1.7)
    cx, cy = placer.place_other(r + 1.0)
    if rng.uniform() < 0.3:
        level = spec.background_level + rng.uniform_range(20.0, 60.0)
    else:
        level = spec.background_level - rng.uniform_range(20.0, 70.0)
    canvas[rasterize_disc(spec.height, spec.width, cx, cy, r)] = level


def _paint_intact(canvas, rng, spec, cx, cy, r):
    halo_level = max(10.0, spec.background_level - 70.0)
    y0 = max(int(cy - r - spec.halo_width - 2), 0)
    y1 = min(int(cy + r + spec.halo_width + 3), spec.height)
    x0 = max(int(cx - r - spec.halo_width - 2), 0)
    x1 = min(int(cx + r + spec.halo_width + 3), spec.width)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    disc = d2 < r * r
    halo = (d2 >= r * r) & (d2 < (r + spec.halo_width) ** 2)
    region = canvas[y0:y1, x0:x1]
    region[halo] = halo_level
    speckle = rng.normal_field(region.shape, 0.0, 5.0)
    region[disc] = spec.particle_level + speckle[disc]


def generate_scene(spec: SceneSpec) -> tuple[np.ndarray, SceneTruth]:
    """Render one scene and its exact ground truth.

    Paint order is artefacts, large debris, broken particles, small
    debris, then intact particles, so nothing ever occludes an intact
    disc or its halo; Gaussian noise is added last and the result is
    clipped to [0, 255] and quantized to uint8.
    """
    spec.validate()
    rng = SplitMix64(spec.seed)
    placer = _Placer(spec, rng)

    # Geometry is drawn before painting so confuser placement can avoid
    # every intact halo.
    circles: list[CandidateCircle] = []
    for _ in range(spec.n_intact):
        r = max(3.0, rng.normal(spec.radius_mean, spec.radius_sd))
        cx, cy = placer.place_intact(r)
        circles.append(CandidateCircle(cx=cx, cy=cy, r=r))

    canvas = np.full((spec.height, spec.width), float(spec.background_level))
    for _ in range(spec.n_artefacts):
        _paint_artefact(canvas, rng, placer, spec)
    for _ in range(spec.n_large_debris):
        _paint_large_debris(canvas, rng, placer, spec)
    for _ in range(spec.n_broken):
        _paint_broken(canvas, rng, placer, spec)
    for _ in range(spec.n_small_debris):
        _paint_small_debris(canvas, rng, placer, spec)
    for c in circles:
        _paint_intact(canvas, rng, spec, c.cx, c.cy, c.r)

    if spec.noise_sd > 0:
        canvas = canvas + rng.normal_field(canvas.shape, 0.0, spec.noise_sd)
    img = np.rint(np.clip(canvas, 0.0, 255.0)).astype(np.uint8)

    mask = np.zeros((spec.height, spec.width), dtype=np.uint8)
    for c in circles:
        mask[rasterize_disc(spec.height, spec.width, c.cx, c.cy, c.r)] = 1
    return img, SceneTruth(intact_circles=circles, mask=mask)


# ---------------------------------------------------------------------------
# Corpus generation and on-disk layout
# ---------------------------------------------------------------------------


def write_circles(circles, path: str) -> None:
    """Circle list as JSON lines, one {cx, cy, r} object per circle."""
    with open(path, "w") as f:
        for c in circles:
            f.write(json.dumps({"cx": c.cx, "cy": c.cy, "r": c.r}) + "\n")


def read_circles(path: str) -> list[CandidateCircle]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                d = json.loads(line)
                out.append(CandidateCircle(cx=d["cx"], cy=d["cy"], r=d["r"],
                                           score=d.get("score", 0.0)))
    return out


def generate_corpus(base_spec: SceneSpec, n_images: int, seed: int, out_dir: str) -> list[dict]:
    """Generate n_images scenes with per-image seeds derived from (seed, index).

    Writes image_NNNN.pgm, mask_NNNN.pgm, circles_NNNN.jsonl per scene plus
    manifest.json listing the triples; returns the manifest records.
    """
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for i in range(n_images):
        spec_i = replace(base_spec, seed=derive_seed(seed, i))
        img, truth = generate_scene(spec_i)
        names = {
            "image": f"image_{i:04d}.pgm",
            "mask": f"mask_{i:04d}.pgm",
            "circles": f"circles_{i:04d}.jsonl",
        }
        write_image(img, os.path.join(out_dir, names["image"]))
        write_image(truth.mask, os.path.join(out_dir, names["mask"]))
        write_circles(truth.intact_circles, os.path.join(out_dir, names["circles"]))
        records.append(names)
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(records, f, indent=1)
    return records


def load_manifest(corpus_dir: str) -> list[dict]:
    with open(os.path.join(corpus_dir, "manifest.json")) as f:
        return json.load(f)
