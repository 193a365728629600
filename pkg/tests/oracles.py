"""Independent reference implementations used to check the library.

Everything here is deliberately naive (sorting, enumeration, per-pixel
loops) and shares no code with the paths it verifies.
"""

from itertools import permutations

import numpy as np


def quantile_cuts_by_sorting(pixels: np.ndarray, low_frac: float, high_frac: float):
    """Saturation cut levels from the sorted pixel list.

    Low cut: smallest value whose cumulative pixel count exceeds
    low_frac * N; high cut: smallest value whose cumulative count reaches
    (1 - high_frac) * N.
    """
    flat = np.sort(pixels.ravel())
    n = flat.size
    lo_rank = int(np.floor(low_frac * n))  # first index past low_frac*N pixels
    hi_rank = int(np.ceil((1.0 - high_frac) * n)) - 1
    return int(flat[lo_rank]), int(flat[hi_rank])


def median_by_sorting(img: np.ndarray, window: int) -> np.ndarray:
    """Replicate-padded median filter via explicit window sort."""
    h, w = img.shape
    r = window // 2
    padded = np.pad(img, r, mode="edge")
    out = np.empty_like(img)
    for y in range(h):
        for x in range(w):
            block = padded[y:y + window, x:x + window].ravel()
            out[y, x] = np.sort(block)[block.size // 2]
    return out


def best_assignment(fractions: np.ndarray):
    """Exhaustive optimal one-to-one assignment of instances to truths.

    fractions[g, i] is the overlap of instance i with truth g; pairs below
    0.25 are ineligible. Maximizes match cardinality first, then total
    overlap. Returns the chosen set of (g, i) pairs.
    """
    n_g, n_i = fractions.shape
    best = (-1, -1.0, [])
    gs = range(n_g)
    for k in range(min(n_g, n_i), -1, -1):
        # permutations of instance subsets against each truth subset
        from itertools import combinations
        found = False
        for g_sub in combinations(gs, k):
            for i_perm in permutations(range(n_i), k):
                total = 0.0
                ok = True
                for g, i in zip(g_sub, i_perm):
                    f = fractions[g, i]
                    if f < 0.25:
                        ok = False
                        break
                    total += f
                if ok:
                    found = True
                    if (k, total) > (best[0], best[1]):
                        best = (k, total, list(zip(g_sub, i_perm)))
        if found:
            break  # maximum cardinality found; lower k cannot win
    return best[2]


def categorize(fraction: float) -> str:
    if fraction >= 0.75:
        return "tp75"
    if fraction >= 0.50:
        return "tp50"
    return "tp25"


def counts_from_pairs(pairs, fractions, n_instances, n_gts):
    c = {"tp75": 0, "tp50": 0, "tp25": 0}
    for g, i in pairs:
        c[categorize(fractions[g, i])] += 1
    matched_i = {i for _, i in pairs}
    matched_g = {g for g, _ in pairs}
    c["fp"] = n_instances - len(matched_i)
    c["fn"] = n_gts - len(matched_g)
    return c


def xent_by_pixel_loop(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy computed with one scalar loop per pixel."""
    import math

    n, _, h, w = logits.shape
    total = 0.0
    for b in range(n):
        for y in range(h):
            for x in range(w):
                z0, z1 = float(logits[b, 0, y, x]), float(logits[b, 1, y, x])
                m = max(z0, z1)
                p = math.exp((z1 if labels[b, y, x] else z0) - m) / (
                    math.exp(z0 - m) + math.exp(z1 - m)
                )
                total += -math.log(p)
    return total / (n * h * w)
