"""Multi-octave corner detection and nearest-ink assignment.

The detector is a segment-test corner detector: a pixel is a corner when at
least ``arc`` contiguous pixels on the 16-pixel Bresenham ring of radius 3
are all brighter than the centre plus a threshold, or all darker than the
centre minus it.  The response is the total threshold excess over the ring
on the winning side.  Detection runs on a pyramid of 2x2-averaged octaves
with 3x3 non-maximum suppression per octave; coordinates map back to the
full resolution.  Results are ordered by response (descending), then row,
then column, and truncated to ``max_points``.

Keypoints are later snapped to the signature skeleton: each one is assigned
its nearest ink pixel (Euclidean distance, exact integer arithmetic), ties
resolving to the earliest ink pixel in row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageproc import SkeletonImage

__all__ = ["KeypointSet", "detect_keypoints", "assign_to_skeleton"]

# Bresenham ring of radius 3, clockwise from 12 o'clock: (drow, dcol).
RING_OFFSETS = (
    (-3, 0), (-3, 1), (-2, 2), (-1, 3), (0, 3), (1, 3), (2, 2), (3, 1),
    (3, 0), (3, -1), (2, -2), (1, -3), (0, -3), (-1, -3), (-2, -2), (-3, -1),
)


@dataclass(frozen=True)
class KeypointSet:
    """Detected corners in deterministic order.  ``assigned_rows/cols`` are
    filled by :func:`assign_to_skeleton` with the nearest skeleton pixel of
    each keypoint."""

    rows: np.ndarray
    cols: np.ndarray
    scores: np.ndarray
    octaves: np.ndarray
    assigned_rows: np.ndarray | None = None
    assigned_cols: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "rows", np.asarray(self.rows, dtype=np.int64))
        object.__setattr__(self, "cols", np.asarray(self.cols, dtype=np.int64))
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))
        object.__setattr__(self, "octaves", np.asarray(self.octaves, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.rows.size)

    @classmethod
    def empty(cls) -> "KeypointSet":
        z = np.zeros(0)
        return cls(z, z, z, z)


def _ring_stacks(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(16, H-6, W-6) ring values and the matching (H-6, W-6) centres."""
    h, w = img.shape
    centre = img[3 : h - 3, 3 : w - 3]
    ring = np.empty((16,) + centre.shape, dtype=img.dtype)
    for i, (dr, dc) in enumerate(RING_OFFSETS):
        ring[i] = img[3 + dr : h - 3 + dr, 3 + dc : w - 3 + dc]
    return ring, centre


def _segment_test(ring_flag: np.ndarray, arc: int) -> np.ndarray:
    """True where some ``arc`` contiguous ring positions are all flagged."""
    wrapped = np.concatenate([ring_flag, ring_flag[: arc - 1]], axis=0)
    hit = np.zeros(ring_flag.shape[1:], dtype=bool)
    for start in range(16):
        hit |= wrapped[start : start + arc].all(axis=0)
    return hit


def _detect_single_octave(img: np.ndarray, threshold: float, arc: int) -> np.ndarray:
    """Corner response map (full image size; 3-pixel border is zero)."""
    h, w = img.shape
    score = np.zeros((h, w))
    if h < 7 or w < 7:
        return score
    ring, centre = _ring_stacks(img.astype(np.float64))
    brighter = ring > centre + threshold
    darker = ring < centre - threshold
    corner_bright = _segment_test(brighter, arc)
    corner_dark = _segment_test(darker, arc)
    excess_bright = np.maximum(ring - centre - threshold, 0.0).sum(axis=0)
    excess_dark = np.maximum(centre - ring - threshold, 0.0).sum(axis=0)
    inner = np.where(corner_bright, excess_bright, 0.0) + np.where(
        corner_dark, excess_dark, 0.0
    )
    score[3 : h - 3, 3 : w - 3] = inner
    return score


def _nms(score: np.ndarray) -> np.ndarray:
    """3x3 non-maximum suppression; equal-response ties keep the pixel that
    comes first in row-major order."""
    h, w = score.shape
    padded = np.full((h + 2, w + 2), -np.inf)
    padded[1:-1, 1:-1] = score
    keep = score > 0.0
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            nb = padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]
            earlier = dr < 0 or (dr == 0 and dc < 0)
            if earlier:
                keep &= ~(nb >= score)
            else:
                keep &= ~(nb > score)
    return keep


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    trimmed = img[: h - h % 2, : w - w % 2].astype(np.float64)
    return 0.25 * (
        trimmed[0::2, 0::2] + trimmed[1::2, 0::2] + trimmed[0::2, 1::2] + trimmed[1::2, 1::2]
    )


def detect_keypoints(
    img: np.ndarray,
    threshold: float = 20.0,
    octaves: int = 3,
    arc: int = 9,
    max_points: int = 200,
) -> KeypointSet:
    """Detect up to ``max_points`` corners across ``octaves`` pyramid levels.

    A blank (cornerless) image yields an empty set.
    """
    if not 1 <= arc <= 16:
        raise ValueError("arc must be between 1 and 16")
    if octaves < 1 or max_points < 1:
        raise ValueError("octaves and max_points must be >= 1")
    level = np.asarray(img, dtype=np.float64)
    all_rows, all_cols, all_scores, all_octaves = [], [], [], []
    for octave in range(octaves):
        if min(level.shape) < 16:
            break
        score = _detect_single_octave(level, threshold, arc)
        keep = _nms(score)
        rr, cc = np.nonzero(keep)
        if rr.size:
            shift = (1 << (octave - 1)) - 1 if octave >= 1 else 0
            all_rows.append(rr * (1 << octave) + shift)
            all_cols.append(cc * (1 << octave) + shift)
            all_scores.append(score[rr, cc])
            all_octaves.append(np.full(rr.size, octave, dtype=np.int64))
        level = _downsample(level)
    if not all_rows:
        return KeypointSet.empty()
    rows = np.concatenate(all_rows)
    cols = np.concatenate(all_cols)
    scores = np.concatenate(all_scores)
    octs = np.concatenate(all_octaves)
    h, w = np.asarray(img).shape
    rows = np.clip(rows, 0, h - 1)
    cols = np.clip(cols, 0, w - 1)
    order = np.lexsort((cols, rows, -scores))[:max_points]
    return KeypointSet(rows[order], cols[order], scores[order], octs[order])


def assign_to_skeleton(kps: KeypointSet, skel: SkeletonImage | np.ndarray) -> KeypointSet:
    """Snap every keypoint to its nearest skeleton ink pixel.

    Distances are exact squared integers; equidistant candidates resolve to
    the ink pixel that comes first in row-major order.  Distinct keypoints
    may share an ink pixel (deduplication is a consumer concern).
    """
    mask = skel.mask if isinstance(skel, SkeletonImage) else np.asarray(skel, dtype=bool)
    ink = np.argwhere(mask)
    if ink.size == 0:
        raise ValueError("empty skeleton: nothing to assign keypoints to")
    if len(kps) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return KeypointSet(kps.rows, kps.cols, kps.scores, kps.octaves, empty, empty)
    d2 = (kps.rows[:, None] - ink[None, :, 0]) ** 2 + (
        kps.cols[:, None] - ink[None, :, 1]
    ) ** 2
    nearest = np.argmin(d2, axis=1)  # first (row-major) ink pixel wins ties
    return KeypointSet(
        kps.rows,
        kps.cols,
        kps.scores,
        kps.octaves,
        ink[nearest, 0].copy(),
        ink[nearest, 1].copy(),
    )
