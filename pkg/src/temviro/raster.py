"""Core raster types and bit-exact image I/O.

Images are plain 2-D numpy arrays: uint8 or uint16 for grayscale
intensities, uint8 with values {0, 1} for label masks. The canonical
lossless on-disk format is binary PGM (P5, big-endian samples); PNG is
supported for convenience.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

GRAY_DTYPES = (np.uint8, np.uint16)


def require_gray(img: np.ndarray) -> np.ndarray:
    """Validate a grayscale image: 2-D, uint8 or uint16, nonzero size."""
    if not isinstance(img, np.ndarray) or img.ndim != 2:
        raise ValueError(f"expected 2-D array, got {getattr(img, 'shape', type(img))}")
    if img.dtype not in GRAY_DTYPES:
        raise ValueError(f"expected uint8 or uint16 pixels, got {img.dtype}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    return img


def require_mask(mask: np.ndarray) -> np.ndarray:
    """Validate a label mask: 2-D uint8 with values in {0, 1}."""
    if not isinstance(mask, np.ndarray) or mask.ndim != 2 or mask.dtype != np.uint8:
        raise ValueError("label mask must be a 2-D uint8 array")
    if mask.size and mask.max() > 1:
        raise ValueError("label mask values must be 0 (background) or 1 (particle)")
    return mask


def bit_depth(img: np.ndarray) -> int:
    return 8 if img.dtype == np.uint8 else 16


def convert_depth_16_to_8(img: np.ndarray) -> np.ndarray:
    """Rescale a 16-bit image to 8 bits: out = round(v * 255 / 65535).

    Fixed full-scale mapping, not per-image min-max, so absolute
    brightness is preserved. Exact-half ties cannot occur (510*v is never
    an odd multiple of 65535), so the rounding mode is immaterial.
    """
    require_gray(img)
    if img.dtype != np.uint16:
        raise ValueError("input is already 8-bit")
    return np.rint(img.astype(np.float64) * 255.0 / 65535.0).astype(np.uint8)


@dataclass
class PatchGrid:
    """Row-major grid of non-overlapping square tiles."""

    patch_size: int
    rows: int
    cols: int
    patches: list  # of 2-D arrays, len == rows * cols

    def __post_init__(self):
        if len(self.patches) != self.rows * self.cols:
            raise ValueError("patch count must equal rows * cols")
        for p in self.patches:
            if p.shape != (self.patch_size, self.patch_size):
                raise ValueError(
                    f"every patch must be {self.patch_size}x{self.patch_size}, got {p.shape}"
                )


def split_patches(img: np.ndarray, patch_size: int) -> PatchGrid:
    """Split into non-overlapping patch_size x patch_size tiles.

    Dimensions must be divisible by patch_size; there is no implicit
    padding.
    """
    h, w = img.shape
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    if h % patch_size or w % patch_size:
        raise ValueError(f"image {w}x{h} not divisible by patch size {patch_size}")
    rows, cols = h // patch_size, w // patch_size
    patches = [
        img[r * patch_size:(r + 1) * patch_size, c * patch_size:(c + 1) * patch_size].copy()
        for r in range(rows)
        for c in range(cols)
    ]
    return PatchGrid(patch_size, rows, cols, patches)


def stitch_patches(grid: PatchGrid) -> np.ndarray:
    """Inverse of split_patches; stitch(split(img)) == img bit-exactly."""
    s = grid.patch_size
    out = np.empty((grid.rows * s, grid.cols * s), dtype=grid.patches[0].dtype)
    for r in range(grid.rows):
        for c in range(grid.cols):
            out[r * s:(r + 1) * s, c * s:(c + 1) * s] = grid.patches[r * grid.cols + c]
    return out


def rasterize_disc(height: int, width: int, cx: float, cy: float, r: float) -> np.ndarray:
    """Boolean disc mask: pixel (x, y) is inside iff (x-cx)^2 + (y-cy)^2 < r^2.

    This single routine defines circle rasterization everywhere: synthetic
    ground truth, annotation export, and overlap scoring all share it.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    ys = np.arange(height, dtype=np.float64)[:, None] - cy
    xs = np.arange(width, dtype=np.float64)[None, :] - cx
    return (xs * xs + ys * ys) < r * r


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    # Tokenize the header: magic, width, height, maxval. '#' starts a
    # comment running to end of line.
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        c = data[pos:pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace() and data[end:end + 1] != b"#":
                end += 1
            tokens.append(data[pos:end])
            pos = end
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise ValueError(f"{path}: malformed PGM header")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header") from None
    if w < 1 or h < 1:
        raise ValueError(f"{path}: bad PGM dimensions {w}x{h}")
    if maxval not in (255, 65535):
        raise ValueError(f"{path}: unsupported PGM maxval {maxval} (need 255 or 65535)")
    pos += 1  # single whitespace byte after maxval
    nbytes = w * h * (1 if maxval == 255 else 2)
    payload = data[pos:pos + nbytes]
    if len(payload) != nbytes:
        raise ValueError(f"{path}: truncated PGM payload ({len(payload)} of {nbytes} bytes)")
    if maxval == 255:
        arr = np.frombuffer(payload, dtype=np.uint8)
    else:
        arr = np.frombuffer(payload, dtype=">u2").astype(np.uint16)
    return arr.reshape(h, w)


def _write_pgm(img: np.ndarray, path: str) -> None:
    h, w = img.shape
    maxval = 255 if img.dtype == np.uint8 else 65535
    header = f"P5 {w} {h} {maxval}\n".encode("ascii")
    body = img.tobytes() if img.dtype == np.uint8 else img.astype(">u2").tobytes()
    with open(path, "wb") as f:
        f.write(header + body)


def read_image(path: str) -> np.ndarray:
    """Read a grayscale image (PGM or PNG). Color files are rejected."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        return _read_pgm(path)
    if ext == ".png":
        with Image.open(path) as im:
            if im.mode == "L":
                return np.asarray(im, dtype=np.uint8)
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im)
                if arr.max(initial=0) > 65535 or arr.min(initial=0) < 0:
                    raise ValueError(f"{path}: pixel values exceed 16-bit range")
                return arr.astype(np.uint16)
            raise ValueError(f"{path}: unsupported PNG mode {im.mode} (grayscale only)")
    raise ValueError(f"{path}: unsupported format (use .pgm or .png)")


def write_image(img: np.ndarray, path: str) -> None:
    """Write a grayscale image; format chosen by extension (.pgm or .png)."""
    require_gray(img)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        _write_pgm(img, path)
    elif ext == ".png":
        if img.dtype == np.uint8:
            Image.fromarray(img, mode="L").save(path)
        else:
            Image.fromarray(img.astype("<u2"), mode="I;16").save(path)
    else:
        raise ValueError(f"{path}: unsupported format (use .pgm or .png)")


def write_rgb_png(img: np.ndarray, path: str) -> None:
    """Write an (H, W, 3) uint8 array as RGB PNG (report overlays)."""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("expected (H, W, 3) uint8 array")
    Image.fromarray(img, mode="RGB").save(path)
