"""Dense patch extraction at skeleton pixels.

Every ink pixel of a skeleton contributes one column: the grayscale
``patch_size x patch_size`` window centred at the pixel, flattened
column-wise (all rows of window column 0, then window column 1, ...).
Columns are ordered by the row-major scan of the skeleton, so column ``i``
corresponds to ``locations[i]``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .imageproc import SkeletonImage, otsu_level

__all__ = ["PatchMatrix", "extract_patches", "save_patch_matrix", "load_patch_matrix"]


@dataclass(frozen=True)
class PatchMatrix:
    """``data`` is (n, M) float64 with n = patch_size**2 and one column per
    skeleton ink pixel; ``locations`` is (M, 2) int (row, col) in row-major
    scan order."""

    data: np.ndarray
    locations: np.ndarray
    patch_size: int
    centered: bool

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        locations = np.asarray(self.locations, dtype=np.int64)
        if data.ndim != 2 or data.shape[0] != self.patch_size**2:
            raise ValueError("data must be (patch_size**2, M)")
        if locations.shape != (data.shape[1], 2):
            raise ValueError("locations must be (M, 2)")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "locations", locations)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def M(self) -> int:
        return self.data.shape[1]


def background_level(img: np.ndarray) -> float:
    """Mean intensity of the light (background) side of an Otsu split.

    For a uniform image the constant itself is the background level.
    """
    img = np.asarray(img)
    if img.min() == img.max():
        return float(img.flat[0])
    t = otsu_level(img)
    return float(img[img > t].mean())


def extract_patches(
    img: np.ndarray,
    skel: SkeletonImage | np.ndarray,
    patch_size: int = 5,
    center: bool = True,
    background: float | None = None,
) -> PatchMatrix:
    """Gather the grayscale window around every skeleton ink pixel.

    Windows reaching past the image border are padded with ``background``
    (default: the image's Otsu light-side mean).  With ``center`` each
    column has its own mean subtracted; without it, values are the exact
    8-bit intensities cast to float.
    """
    if patch_size < 3 or patch_size % 2 == 0:
        raise ValueError("patch_size must be odd and >= 3")
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("expected a 2-D uint8 grayscale image")
    mask = skel.mask if isinstance(skel, SkeletonImage) else np.asarray(skel, dtype=bool)
    if mask.shape != img.shape:
        raise ValueError("skeleton and image shapes differ")
    locations = np.argwhere(mask)  # row-major scan order
    if len(locations) == 0:
        raise ValueError("empty skeleton: no ink pixels")
    if background is None:
        background = background_level(img)

    half = patch_size // 2
    padded = np.full(
        (img.shape[0] + 2 * half, img.shape[1] + 2 * half), float(background)
    )
    padded[half:-half, half:-half] = img
    windows = np.lib.stride_tricks.sliding_window_view(padded, (patch_size, patch_size))
    gathered = windows[locations[:, 0], locations[:, 1]]  # (M, P, P)
    # Column-wise flattening inside each window: transpose row/col axes.
    data = gathered.transpose(0, 2, 1).reshape(len(locations), -1).T.copy()
    if center:
        data -= data.mean(axis=0, keepdims=True)
    return PatchMatrix(data, locations, patch_size, bool(center))


def save_patch_matrix(path: str | os.PathLike, pm: PatchMatrix | np.ndarray) -> None:
    """Debugging dump: header of two little-endian uint32 ``{n, M}`` followed
    by the matrix as column-major float64.  No other metadata is stored."""
    data = pm.data if isinstance(pm, PatchMatrix) else np.asarray(pm, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", data.shape[0], data.shape[1]))
        fh.write(np.asfortranarray(data, dtype=np.float64).tobytes(order="F"))


def load_patch_matrix(path: str | os.PathLike) -> np.ndarray:
    """Read a :func:`save_patch_matrix` dump back as an (n, M) array."""
    with open(path, "rb") as fh:
        n, m = struct.unpack("<II", fh.read(8))
        raw = fh.read(8 * n * m)
    if len(raw) != 8 * n * m:
        raise ValueError("truncated patch matrix file")
    return np.frombuffer(raw, dtype=np.float64).reshape((n, m), order="F").copy()
