"""Pooled signature descriptors over sparse codes.

Five pooling statistics condense a subset of code columns (each column is
one skeleton pixel's sparse code) into a single length-K vector:

    f1  per-row mean
    f2  per-row plain maximum (no absolute value)
    f3  per-row sample standard deviation (divisor M - 1)
    f4  per-row sums normalized by the grand total (entries sum to 1)
    f5  per-row sums normalized to unit Euclidean norm

Degenerate subsets (no columns; a single column for f3; zero total for f4;
zero norm for f5) pool to the zero vector and emit a degenerate-input
warning.

The descriptor stacks pooled blocks: the whole signature, the beta**2 cells
of an equimass spatial pyramid, and the pixels touched by detected
keypoints — (beta**2 + 2) * K values in that order.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .flags import DegenerateInputWarning, warn
from .imageproc import SkeletonImage
from .keypoints import KeypointSet
from .sparse import SparseCodes

__all__ = [
    "POOLING_TAGS",
    "pool",
    "SegmentMap",
    "equimass_segment",
    "SignatureDescriptor",
    "build_descriptor",
    "save_descriptor_json",
    "load_descriptor_json",
    "save_descriptor_bin",
    "load_descriptor_bin",
]

POOLING_TAGS = ("f1", "f2", "f3", "f4", "f5")


def _codes_matrix(codes) -> np.ndarray:
    a = codes.codes if isinstance(codes, SparseCodes) else np.asarray(codes, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("codes must form a (K, M) matrix")
    return a


def pool(codes, method: str, columns=None) -> np.ndarray:
    """Pool the selected code columns into one length-K vector."""
    a = _codes_matrix(codes)
    method = method.lower()
    if method not in POOLING_TAGS:
        raise ValueError(f"unknown pooling {method!r}; expected one of {POOLING_TAGS}")
    sub = a if columns is None else a[:, np.asarray(columns, dtype=np.int64)]
    k, m = sub.shape
    if m == 0:
        warn(DegenerateInputWarning, f"{method}: empty column subset pools to zero")
        return np.zeros(k)
    if method == "f1":
        return sub.mean(axis=1)
    if method == "f2":
        return sub.max(axis=1)
    if method == "f3":
        if m < 2:
            warn(DegenerateInputWarning, "f3: need >= 2 columns for a sample deviation")
            return np.zeros(k)
        return sub.std(axis=1, ddof=1)
    row_sums = sub.sum(axis=1)
    if method == "f4":
        total = row_sums.sum()
        if total == 0.0:
            warn(DegenerateInputWarning, "f4: zero grand total pools to zero")
            return np.zeros(k)
        return row_sums / total
    nrm = np.linalg.norm(row_sums)
    if nrm == 0.0:
        warn(DegenerateInputWarning, "f5: zero row-sum vector pools to zero")
        return np.zeros(k)
    return row_sums / nrm


# --------------------------------------------------------------------------
# Equimass spatial pyramid
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SegmentMap:
    """Per-skeleton-pixel cell labels, aligned with the row-major skeleton
    scan order (the same order patch columns use).  Label = strip * beta +
    band, strips being vertical slices and bands horizontal runs inside a
    strip."""

    beta: int
    labels: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))

    @property
    def n_segments(self) -> int:
        return self.beta * self.beta

    def masses(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_segments)

    def columns_of(self, segment: int) -> np.ndarray:
        return np.flatnonzero(self.labels == segment)


def equimass_segment(skel: SkeletonImage | np.ndarray, beta: int) -> SegmentMap:
    """Split the skeleton into ``beta**2`` cells of near-equal ink mass.

    Vertical strips cut at whole columns: strip k ends at the smallest
    column whose cumulative ink count reaches k/beta of the total, the cut
    column belonging to the lower-index strip (a single heavy column can
    therefore degenerate the strip split).  Each strip is then divided into
    ``beta`` bands by chunking its pixels in row-major order, so band masses
    within a strip differ by at most one pixel.
    """
    if beta < 1:
        raise ValueError("beta must be >= 1")
    mask = skel.mask if isinstance(skel, SkeletonImage) else np.asarray(skel, dtype=bool)
    coords = np.argwhere(mask)
    m = len(coords)
    if m == 0:
        raise ValueError("empty skeleton: nothing to segment")
    cols = coords[:, 1]
    width = int(mask.shape[1])
    cum = np.cumsum(np.bincount(cols, minlength=width))
    targets = m * np.arange(1, beta) / beta
    boundaries = np.searchsorted(cum, targets, side="left")
    strips = np.searchsorted(boundaries, cols, side="left")

    labels = np.empty(m, dtype=np.int64)
    for s in range(beta):
        members = np.flatnonzero(strips == s)  # already row-major ordered
        ms = len(members)
        edges = (np.arange(beta + 1) * ms) // beta
        for band in range(beta):
            labels[members[edges[band] : edges[band + 1]]] = s * beta + band
    return SegmentMap(beta, labels)


# --------------------------------------------------------------------------
# Descriptor assembly
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SignatureDescriptor:
    """Pooled descriptor of one signature: (beta**2 + 2) * K values in the
    order [whole signature | pyramid cells | keypoint region]."""

    values: np.ndarray
    pooling_tag: str
    beta: int
    K: int

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        expected = (self.beta * self.beta + 2) * self.K
        if values.shape != (expected,):
            raise ValueError(f"descriptor must have {expected} values, got {values.shape}")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size


def _keypoint_columns(
    kps: KeypointSet | None, mask: np.ndarray, m: int
) -> np.ndarray | None:
    if kps is None or len(kps) == 0 or kps.assigned_rows is None:
        return None
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[mask] = np.arange(m)  # row-major, matching the patch scan order
    linear = kps.assigned_rows * mask.shape[1] + kps.assigned_cols
    cols = index.ravel()[np.unique(linear)]
    if (cols < 0).any():
        raise ValueError("keypoint assigned to a non-skeleton pixel")
    return cols


def build_descriptor(
    codes,
    skel: SkeletonImage | np.ndarray,
    segments: SegmentMap,
    kps: KeypointSet | None,
    pooling: str,
) -> SignatureDescriptor:
    """Stack the global, per-cell, and keypoint-region pooled vectors.

    ``codes`` columns, ``segments.labels``, and the skeleton scan order must
    all describe the same pixels.  A missing or empty keypoint set zeroes
    the final block (flagged) so the descriptor length stays config-stable.
    """
    a = _codes_matrix(codes)
    mask = skel.mask if isinstance(skel, SkeletonImage) else np.asarray(skel, dtype=bool)
    k, m = a.shape
    if int(mask.sum()) != m:
        raise ValueError("codes column count does not match skeleton ink count")
    if len(segments.labels) != m:
        raise ValueError("segment labels do not match the code columns")

    blocks = [pool(a, pooling)]
    for segment in range(segments.n_segments):
        blocks.append(pool(a, pooling, segments.columns_of(segment)))
    kp_cols = _keypoint_columns(kps, mask, m)
    if kp_cols is None:
        warn(DegenerateInputWarning, "no keypoints: keypoint block pooled as zero")
        blocks.append(np.zeros(k))
    else:
        blocks.append(pool(a, pooling, kp_cols))
    return SignatureDescriptor(np.concatenate(blocks), pooling.lower(), segments.beta, k)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------
#
# JSON: {"pooling_tag": str, "beta": int, "K": int, "values": [float, ...]}.
# Binary (little-endian): magic b"SSFD", uint32 version (1), uint8 pooling
# index (1-5), uint32 beta, uint32 K, uint32 value count, float64 values.

_DESC_MAGIC = b"SSFD"
_DESC_VERSION = 1


def save_descriptor_json(path: str | os.PathLike, desc: SignatureDescriptor) -> None:
    payload = {
        "pooling_tag": desc.pooling_tag,
        "beta": desc.beta,
        "K": desc.K,
        "values": desc.values.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_descriptor_json(path: str | os.PathLike) -> SignatureDescriptor:
    with open(path) as fh:
        payload = json.load(fh)
    return SignatureDescriptor(
        np.asarray(payload["values"], dtype=np.float64),
        payload["pooling_tag"],
        int(payload["beta"]),
        int(payload["K"]),
    )


def save_descriptor_bin(path: str | os.PathLike, desc: SignatureDescriptor) -> None:
    pool_index = POOLING_TAGS.index(desc.pooling_tag) + 1
    with open(path, "wb") as fh:
        fh.write(_DESC_MAGIC)
        fh.write(struct.pack("<IBIII", _DESC_VERSION, pool_index, desc.beta, desc.K, len(desc)))
        fh.write(np.ascontiguousarray(desc.values).tobytes())


def load_descriptor_bin(path: str | os.PathLike) -> SignatureDescriptor:
    with open(path, "rb") as fh:
        if fh.read(4) != _DESC_MAGIC:
            raise ValueError("not a descriptor file (bad magic)")
        version, pool_index, beta, k, count = struct.unpack("<IBIII", fh.read(17))
        if version != _DESC_VERSION:
            raise ValueError(f"unsupported descriptor format version {version}")
        raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated descriptor file")
    values = np.frombuffer(raw, dtype="<f8").copy()
    return SignatureDescriptor(values, POOLING_TAGS[pool_index - 1], beta, k)
