"""Signature preprocessing: binarization, homotopic thinning, and selection
of the thinning depth that best stabilizes local ink density.

Conventions
-----------
* Grayscale image: 2-D uint8 array, dark ink on light background.
* Binary image: 2-D bool array, True = ink.
* A "thinning level" counts applications of :func:`thin_once`.

The thinning operator is the two-subiteration parallel scheme of the
Guo–Hall family.  One application runs both subiterations; pixels are
deleted when, with the 8-neighbours of ``p`` labelled

    p9 p2 p3
    p8  p p4        (rows grow downward)
    p7 p6 p5

all of the following hold on the image state at the start of the
subiteration:

    C(p)  = (~p2 & (p3|p4)) + (~p4 & (p5|p6))
          + (~p6 & (p7|p8)) + (~p8 & (p9|p2))          == 1
    N(p)  = min(N1, N2), with
    N1    = (p9|p2) + (p3|p4) + (p5|p6) + (p7|p8)
    N2    = (p2|p3) + (p4|p5) + (p6|p7) + (p8|p9)      in {2, 3}
    mask  = (p6|p7|~p9) & p8   (first subiteration)
            (p2|p3|~p5) & p4   (second subiteration)   == 0

This table is deliberately homotopic: thinning never changes the number of
8-connected ink components, and isolated pixels (N = 0) are never deleted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flags import DegenerateInputWarning, warn

__all__ = [
    "SkeletonImage",
    "PatchDensityCurve",
    "otsu_level",
    "otsu_threshold",
    "thin_once",
    "thin_to_level",
    "patch_density",
    "optimal_thinning_level",
    "motl",
]


# --------------------------------------------------------------------------
# Binarization
# --------------------------------------------------------------------------

def otsu_level(img: np.ndarray) -> int:
    """Gray level ``t`` maximizing between-class variance of the split
    ``{v <= t} / {v > t}`` over the 256-bin histogram.

    Ties resolve to the smallest level.  For a single-level image the sole
    occupied level is returned.
    """
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError("expected a uint8 grayscale image")
    hist = np.bincount(img.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    if total == 0:
        raise ValueError("empty image")
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)                      # mass of {v <= t}
    m0 = np.cumsum(hist * levels)             # first moment of {v <= t}
    w1 = total - w0
    mean_total = m0[-1]
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return int(np.argmax(hist))
    mu0 = np.where(valid, m0 / np.maximum(w0, 1.0), 0.0)
    mu1 = np.where(valid, (mean_total - m0) / np.maximum(w1, 1.0), 0.0)
    between = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -np.inf)
    return int(np.argmax(between))


def otsu_threshold(img: np.ndarray) -> np.ndarray:
    """Binarize ``img`` at the Otsu level; dark-side pixels become ink (True).

    A uniform image yields an all-False mask and a degenerate-input warning.
    """
    img = np.asarray(img)
    if img.size and img.min() == img.max():
        warn(DegenerateInputWarning, "uniform image: no ink/background separation")
        return np.zeros(img.shape, dtype=bool)
    return img <= otsu_level(img)


# --------------------------------------------------------------------------
# Thinning
# --------------------------------------------------------------------------

# 8-neighbour offsets in table order p2..p9 (N, NE, E, SE, S, SW, W, NW).
_NEIGHBOR_OFFSETS = (
    (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1),
)


def _neighbor_stack(mask: np.ndarray) -> np.ndarray:
    """(8, H, W) bool stack of neighbours p2..p9, zero outside the image."""
    h, w = mask.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask
    out = np.empty((8, h, w), dtype=bool)
    for i, (dr, dc) in enumerate(_NEIGHBOR_OFFSETS):
        out[i] = padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]
    return out


def _thin_subiteration(mask: np.ndarray, parity: int) -> np.ndarray:
    p2, p3, p4, p5, p6, p7, p8, p9 = _neighbor_stack(mask)
    c = (
        (~p2 & (p3 | p4)).astype(np.uint8)
        + (~p4 & (p5 | p6))
        + (~p6 & (p7 | p8))
        + (~p8 & (p9 | p2))
    )
    n1 = (p9 | p2).astype(np.uint8) + (p3 | p4) + (p5 | p6) + (p7 | p8)
    n2 = (p2 | p3).astype(np.uint8) + (p4 | p5) + (p6 | p7) + (p8 | p9)
    n = np.minimum(n1, n2)
    if parity == 0:
        m = (p6 | p7 | ~p9) & p8
    else:
        m = (p2 | p3 | ~p5) & p4
    deletable = mask & (c == 1) & (n >= 2) & (n <= 3) & ~m
    return mask & ~deletable


def thin_once(mask: np.ndarray) -> np.ndarray:
    """One full thinning operation (both subiterations).  Never adds ink and
    never changes the number of 8-connected components."""
    mask = np.asarray(mask, dtype=bool)
    out = _thin_subiteration(mask, 0)
    return _thin_subiteration(out, 1)


@dataclass(frozen=True)
class SkeletonImage:
    """A binary image together with the thinning depth that produced it."""

    mask: np.ndarray
    thin_level: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    @property
    def ink_count(self) -> int:
        return int(self.mask.sum())


def thin_to_level(mask: np.ndarray, level: int) -> SkeletonImage:
    """Apply ``thin_once`` up to ``level`` times, stopping early once a pass
    changes nothing.  ``thin_level`` records the applications that had an
    effect, so composition adds up: thinning to ``a`` then ``b`` more equals
    thinning to ``a + b`` (both capped by the idempotent depth)."""
    if level < 0:
        raise ValueError("thinning level must be >= 0")
    cur = np.asarray(mask, dtype=bool)
    applied = 0
    for _ in range(level):
        nxt = thin_once(cur)
        if np.array_equal(nxt, cur):
            break
        cur = nxt
        applied += 1
    return SkeletonImage(cur, applied)


# --------------------------------------------------------------------------
# Patch density and the optimal thinning level
# --------------------------------------------------------------------------

def _window_counts(mask: np.ndarray, patch_size: int) -> np.ndarray:
    """Exact ink counts in the patch_size x patch_size window centred at
    every pixel, windows clipped at the borders (integral-image sums)."""
    h, w = mask.shape
    half = patch_size // 2
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(mask, axis=0), axis=1, out=integral[1:, 1:])
    rows = np.arange(h)
    cols = np.arange(w)
    r0 = np.clip(rows - half, 0, h)
    r1 = np.clip(rows + half + 1, 0, h)
    c0 = np.clip(cols - half, 0, w)
    c1 = np.clip(cols + half + 1, 0, w)
    return (
        integral[np.ix_(r1, c1)]
        - integral[np.ix_(r0, c1)]
        - integral[np.ix_(r1, c0)]
        + integral[np.ix_(r0, c0)]
    )


def patch_density(skel: SkeletonImage | np.ndarray, patch_size: int) -> float:
    """Mean, over all ink pixels, of the ink count inside the patch-sized
    window centred there divided by the *full* window area.

    Windows are clipped at image borders but still normalized by
    ``patch_size ** 2``, so border pixels contribute lower densities.
    """
    if patch_size < 3 or patch_size % 2 == 0:
        raise ValueError("patch_size must be odd and >= 3")
    mask = skel.mask if isinstance(skel, SkeletonImage) else np.asarray(skel, dtype=bool)
    total = int(mask.sum())
    if total == 0:
        raise ValueError("empty skeleton: no ink pixels")
    counts = _window_counts(mask, patch_size)
    return float(counts[mask].sum()) / (total * patch_size * patch_size)


@dataclass(frozen=True)
class PatchDensityCurve:
    """Patch densities of the successive thinning levels of one image."""

    pd: np.ndarray  # pd[i] = density after i thinning operations

    def __post_init__(self) -> None:
        object.__setattr__(self, "pd", np.asarray(self.pd, dtype=np.float64))

    @property
    def diffs(self) -> np.ndarray:
        """First differences: diffs[i] = pd[i + 1] - pd[i]."""
        return np.diff(self.pd)

    def __len__(self) -> int:
        return len(self.pd)


def optimal_thinning_level(
    mask: np.ndarray, patch_size: int
) -> tuple[int, PatchDensityCurve]:
    """Thinning depth at which local ink density stops collapsing.

    The image is thinned until idempotent, recording the patch density at
    every level.  The optimal level is the one reached by the steepest
    density drop: ``argmin`` of the first differences, offset to the
    destination level, ties resolving to the smallest level.  An image that
    is already idempotent yields level 0 with a warning.
    """
    cur = np.asarray(mask, dtype=bool)
    densities = [patch_density(cur, patch_size)]
    while True:
        nxt = thin_once(cur)
        if np.array_equal(nxt, cur):
            break
        cur = nxt
        densities.append(patch_density(cur, patch_size))
    curve = PatchDensityCurve(np.array(densities))
    if len(curve) == 1:
        warn(DegenerateInputWarning, "image already idempotent under thinning; level 0")
        return 0, curve
    return int(np.argmin(curve.diffs)) + 1, curve


def motl(masks: list[np.ndarray], patch_size: int) -> int:
    """Median optimal thinning level of a set of reference images.

    Uses the lower median for even counts so the result is always one of the
    observed integer levels.
    """
    if not masks:
        raise ValueError("need at least one reference image")
    levels = sorted(optimal_thinning_level(m, patch_size)[0] for m in masks)
    return levels[(len(levels) - 1) // 2]
