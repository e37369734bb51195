"""Grayscale image loading and saving.

Supported formats:

* binary PGM (``P5``, maxval <= 255), parsed and written by this module;
* PNG (and other Pillow-readable formats), decoded via Pillow and converted
  to 8-bit grayscale.

In-memory convention: a grayscale image is a 2-D ``uint8`` array with dark
ink on a light background (0 = black ink).  ``load_gray`` can detect and fix
inverted inputs: the candidate ink side is the minority class of an Otsu
split, and if that side is the *brighter* one the image is inverted.
"""

from __future__ import annotations

import os

import numpy as np

from .flags import DegenerateInputWarning, warn


def _parse_pgm(data: bytes) -> np.ndarray:
    if data[:2] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    # Header = magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments running to end of line.
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise ValueError("truncated PGM header")
        c = data[pos : pos + 1]
        if c == b"#":
            eol = data.find(b"\n", pos)
            pos = len(data) if eol < 0 else eol + 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            tokens.append(int(data[pos:end]))
            pos = end
    width, height, maxval = tokens
    if not 0 < maxval <= 255:
        raise ValueError(f"unsupported PGM maxval {maxval}, expected <= 255")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos : pos + width * height]
    if len(raster) < width * height:
        raise ValueError("truncated PGM raster")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    if maxval != 255:
        img = np.rint(img.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return img.copy()


def _write_pgm(path: str, img: np.ndarray) -> None:
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def _otsu_split_means(img: np.ndarray) -> tuple[float, float, float] | None:
    """(dark fraction, dark mean, light mean) of an Otsu split, or None if
    the image has a single gray level."""
    from .imageproc import otsu_level  # local import to avoid a cycle

    if img.min() == img.max():
        return None
    t = otsu_level(img)
    dark = img <= t
    return float(dark.mean()), float(img[dark].mean()), float(img[~dark].mean())


def load_gray(path: str | os.PathLike, invert: bool | str = "auto") -> np.ndarray:
    """Load an 8-bit grayscale image as a (H, W) uint8 array.

    ``invert`` controls ink polarity: ``True`` always inverts, ``False``
    never does, ``"auto"`` (default) inverts when the minority side of an
    Otsu split — the presumed ink — is brighter than the majority side,
    which indicates light-on-dark input.
    """
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        data = fh.read()
    if head == b"P5":
        img = _parse_pgm(data)
    else:
        from PIL import Image, UnidentifiedImageError
        import io

        try:
            with Image.open(io.BytesIO(data)) as im:
                img = np.asarray(im.convert("L"), dtype=np.uint8).copy()
        except UnidentifiedImageError:
            raise ValueError(f"{path}: not a recognized image format") from None
    if img.ndim != 2:
        raise ValueError("expected a single-channel image")

    if invert == "auto":
        split = _otsu_split_means(img)
        if split is None:
            warn(DegenerateInputWarning, f"{path}: uniform image, polarity undetermined")
            do_invert = False
        else:
            dark_frac, dark_mean, light_mean = split
            # Minority class = presumed ink.  dark_mean < light_mean always,
            # so "ink brighter than background" means the minority is the
            # light side.
            do_invert = dark_frac > 0.5
    else:
        do_invert = bool(invert)
    return (255 - img) if do_invert else img


def save_gray(path: str | os.PathLike, img: np.ndarray) -> None:
    """Save a (H, W) uint8 array as PGM (``.pgm``) or via Pillow otherwise."""
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("expected a 2-D uint8 image")
    path = os.fspath(path)
    if path.lower().endswith(".pgm"):
        _write_pgm(path, img)
    else:
        from PIL import Image

        Image.fromarray(img, mode="L").save(path)


def mask_to_gray(mask: np.ndarray) -> np.ndarray:
    """Render a boolean ink mask as a uint8 image (ink black on white)."""
    return np.where(np.asarray(mask, dtype=bool), 0, 255).astype(np.uint8)


def gray_to_mask(img: np.ndarray) -> np.ndarray:
    """Inverse of :func:`mask_to_gray` for images holding only {0, 255}."""
    return np.asarray(img) < 128
