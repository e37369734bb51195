"""Experiment orchestration: datasets, noise, synthesis, and the protocol.

The evaluation protocol, per repetition and per writer:

1. draw ``n_g_ref`` genuine references at random;
2. take the lower-median optimal thinning level of the references (MOTL);
3. learn the writer's dictionary from the reference patches — K-SVD on the
   first reference, then warm-started refinement on each later one
   (``solver=omp``), or pooled online learning (``solver=lars``);
4. build descriptors for the references (positives) and for twice as many
   other-writer genuine samples picked round-robin (negatives);
5. train the grid-searched SVM and score the remaining genuine samples,
   every skilled forgery, and a random-forgery pool of
   ``n_random_per_writer`` genuine samples from each other writer (samples
   already spent as negatives are avoided while supplies last);
6. reduce to per-writer error rates and average writer means per
   repetition, then across repetitions.

Randomness is split from the single experiment seed with
``numpy.random.SeedSequence``: one child per repetition, one grandchild per
writer, and five writer-level streams (reference draw, negative draw,
dictionary init, SVM, random pool).  Noise is seeded per image from the
experiment seed and the image's trailing path components, so a given image
receives the same corruption in every repetition.
"""

from __future__ import annotations

import hashlib
import re
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .descriptor import (
    POOLING_TAGS,
    SignatureDescriptor,
    build_descriptor,
    equimass_segment,
)
from .dictlearn import PRIORS, ksvd_fit, ksvd_update, online_fit
from .flags import DegenerateInputWarning
from .imageproc import optimal_thinning_level, otsu_threshold, thin_to_level
from .imgio import load_gray, save_gray
from .keypoints import assign_to_skeleton, detect_keypoints
from .metrics import MetricsReport, ScoreSet, compute_writer_metrics
from .patches import extract_patches
from .sparse import Dictionary, lars_lasso_encode, omp_encode
from .verifier import LabeledFeatureSet, WriterModel, train_svm

__all__ = [
    "NoiseSpec",
    "ExperimentConfig",
    "DatasetLayout",
    "WriterFiles",
    "add_noise",
    "median_filter",
    "synth_generate",
    "image_descriptor",
    "enroll_writer",
    "run_experiment",
]

_IMAGE_EXTS = {".pgm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


# --------------------------------------------------------------------------
# Noise injection and the median prefilter
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Parsed noise description: ``none``, ``salt-pepper:d=0.01``, or
    ``gaussian:m=0,v=0.01`` (moments on the [0, 1] intensity scale)."""

    kind: str
    density: float = 0.0
    mean: float = 0.0
    var: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        body = text.strip().lower()
        kind, _, rest = body.partition(":")
        kind = kind.strip()
        params = {}
        for item in rest.split(","):
            item = item.strip()
            if not item:
                continue
            key, sep, value = item.partition("=")
            if not sep:
                raise ValueError(f"malformed noise parameter {item!r}")
            params[key.strip()] = float(value)
        if kind in ("none", ""):
            if params:
                raise ValueError("'none' takes no noise parameters")
            return cls("none")
        if kind == "salt-pepper":
            density = params.pop("d", 0.01)
            if params:
                raise ValueError(f"unknown salt-pepper parameters {sorted(params)}")
            if not 0.0 <= density <= 1.0:
                raise ValueError("salt-pepper density must be in [0, 1]")
            return cls("salt-pepper", density=density)
        if kind == "gaussian":
            mean = params.pop("m", 0.0)
            var = params.pop("v", 0.01)
            if params:
                raise ValueError(f"unknown gaussian parameters {sorted(params)}")
            if var < 0.0:
                raise ValueError("gaussian variance must be >= 0")
            return cls("gaussian", mean=mean, var=var)
        raise ValueError(f"unknown noise kind {kind!r}")

    def __str__(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "salt-pepper":
            return f"salt-pepper:d={self.density:g}"
        return f"gaussian:m={self.mean:g},v={self.var:g}"


def add_noise(img: np.ndarray, spec: NoiseSpec | str, seed=None) -> np.ndarray:
    """Corrupt a uint8 image; noise math runs on [0, 1], requantized after.

    Salt-and-pepper flips each pixel independently with probability
    ``density`` to 0 or 255 equiprobably; Gaussian adds N(mean, var) per
    pixel and clips.
    """
    if isinstance(spec, str):
        spec = NoiseSpec.parse(spec)
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("expected a 2-D uint8 grayscale image")
    if spec.kind == "none":
        return img.copy()
    rng = np.random.default_rng(seed)
    if spec.kind == "salt-pepper":
        out = img.copy()
        flips = rng.random(img.shape) < spec.density
        values = rng.integers(0, 2, size=img.shape, dtype=np.uint8) * np.uint8(255)
        out[flips] = values[flips]
        return out
    scaled = img / 255.0 + rng.normal(spec.mean, np.sqrt(spec.var), size=img.shape)
    return np.rint(255.0 * np.clip(scaled, 0.0, 1.0)).astype(np.uint8)


def median_filter(img: np.ndarray, window: int = 3) -> np.ndarray:
    """Per-pixel median over an odd window, clipped at the borders (border
    pixels take the median of the in-image part of their window)."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("expected a 2-D uint8 grayscale image")
    if window == 1:
        return img.copy()
    half = window // 2
    padded = np.full(
        (img.shape[0] + 2 * half, img.shape[1] + 2 * half), np.nan, dtype=np.float64
    )
    padded[half:-half, half:-half] = img
    windows = np.lib.stride_tricks.sliding_window_view(padded, (window, window))
    med = np.nanmedian(windows.reshape(img.shape[0], img.shape[1], -1), axis=2)
    return np.rint(med).astype(np.uint8)


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of a run; serializable as a flat key=value text file whose
    SHA-256 prefix stamps the output directory."""

    seed: int = 0
    patch_size: int = 5
    n_atoms: int = 60
    solver: str = "omp"  # omp | lars
    rho: int = 3
    lam: float = 0.15
    prior: str = "none"  # none | a-positive | d-nonneg | nmf
    ksvd_iters: int = 50
    cascade_iters: int = 10
    minibatch: int = 512
    online_batches: int = 50
    pooling: str = "f3"
    beta: int = 2
    use_keypoints: bool = True
    kp_threshold: float = 20.0
    kp_octaves: int = 3
    kp_arc: int = 9
    max_keypoints: int = 200
    n_g_ref: int = 5
    n_random_per_writer: int = 1
    repetitions: int = 10
    holdout_fraction: float = 0.3
    standardize: bool = True
    c_min: int = -3
    c_max: int = 7
    gamma_min: int = -9
    gamma_max: int = 3
    noise: str = "none"
    median_prefilter: str = "auto"  # auto | on | off

    def __post_init__(self) -> None:
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and >= 3")
        if self.n_atoms <= self.patch_size**2:
            raise ValueError("dictionary must be overcomplete: n_atoms > patch_size^2")
        if self.solver not in ("omp", "lars"):
            raise ValueError("solver must be 'omp' or 'lars'")
        if self.pooling not in POOLING_TAGS:
            raise ValueError(f"pooling must be one of {POOLING_TAGS}")
        if self.prior != "none" and self.prior not in PRIORS:
            raise ValueError(f"prior must be 'none' or one of {PRIORS}")
        if self.prior in ("d-nonneg", "nmf") and self.solver != "lars":
            raise ValueError("non-negative dictionary priors require solver=lars")
        if not 1 <= self.rho <= self.patch_size**2:
            raise ValueError("rho must be between 1 and the patch dimension")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if min(self.ksvd_iters, self.cascade_iters, self.minibatch,
               self.online_batches) < 1:
            raise ValueError("iteration and batch counts must be >= 1")
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        if self.kp_octaves < 1 or not 1 <= self.kp_arc <= 16 or self.max_keypoints < 1:
            raise ValueError("invalid keypoint parameters")
        if self.kp_threshold <= 0:
            raise ValueError("kp_threshold must be positive")
        if self.n_g_ref < 2:
            raise ValueError("n_g_ref must be >= 2")
        if self.n_random_per_writer < 0:
            raise ValueError("n_random_per_writer must be >= 0")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in (0, 1)")
        if self.c_min > self.c_max or self.gamma_min > self.gamma_max:
            raise ValueError("empty hyperparameter grid bounds")
        if self.median_prefilter not in ("auto", "on", "off"):
            raise ValueError("median_prefilter must be auto, on, or off")
        NoiseSpec.parse(self.noise)  # raises on a malformed spec

    @property
    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec.parse(self.noise)

    @property
    def median_on(self) -> bool:
        if self.median_prefilter == "on":
            return True
        if self.median_prefilter == "off":
            return False
        return self.noise_spec.kind != "none"

    @property
    def center_patches(self) -> bool:
        # Non-negative dictionaries need non-negative training signals.
        return self.prior not in ("d-nonneg", "nmf")

    @property
    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            2.0 ** np.arange(self.c_min, self.c_max + 1, dtype=np.float64),
            2.0 ** np.arange(self.gamma_min, self.gamma_max + 1, dtype=np.float64),
        )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        lines = []
        for name in sorted(self.as_dict()):
            value = getattr(self, name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls(**_parse_config_pairs(cls, text.splitlines()))

    def with_overrides(self, pairs: list[str]) -> "ExperimentConfig":
        """Apply ``key=value`` override strings on top of this config."""
        merged = self.as_dict()
        merged.update(_parse_config_pairs(type(self), pairs))
        return type(self)(**merged)

    @property
    def hash12(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:12]


_FIELD_TYPES = {f.name: type(f.default) for f in fields(ExperimentConfig)}


def _parse_config_pairs(cls, lines) -> dict:
    out = {}
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ValueError(f"malformed config line {raw!r}")
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key {key!r}")
        kind = _FIELD_TYPES[key]
        if kind is bool:
            if value.lower() not in ("true", "false"):
                raise ValueError(f"config key {key} expects true/false")
            out[key] = value.lower() == "true"
        elif kind is int:
            out[key] = int(value)
        elif kind is float:
            out[key] = float(value)
        else:
            out[key] = value
    return out


# --------------------------------------------------------------------------
# Dataset layout
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WriterFiles:
    genuine: tuple[Path, ...]
    forgery: tuple[Path, ...]


@dataclass(frozen=True)
class DatasetLayout:
    """Writer manifest: id -> genuine/forgery file lists."""

    root: Path
    writers: dict[str, WriterFiles]

    @property
    def writer_ids(self) -> list[str]:
        return sorted(self.writers)

    @classmethod
    def scan(cls, root) -> "DatasetLayout":
        """Recognize either per-writer directories holding ``genuine_*`` /
        ``forgery_*`` images, or flat ``full_org``/``full_forg`` pools with
        ``original_<writer>_<n>`` / ``forgeries_<writer>_<n>`` names."""
        root = Path(root)
        if not root.is_dir():
            raise ValueError(f"dataset root {root} is not a directory")

        writers: dict[str, WriterFiles] = {}
        for sub in sorted(p for p in root.iterdir() if p.is_dir()):
            files = sorted(
                p for p in sub.iterdir()
                if p.is_file() and p.suffix.lower() in _IMAGE_EXTS
            )
            genuine = tuple(p for p in files if p.name.lower().startswith("genuine"))
            forgery = tuple(p for p in files if p.name.lower().startswith("forgery"))
            if genuine:
                writers[sub.name] = WriterFiles(genuine, forgery)
        if writers:
            return cls(root, writers)

        pools = (root / "full_org", root / "full_forg")
        if pools[0].is_dir():
            pattern = re.compile(r"^(original|forgeries)_(\d+)_(\d+)$")
            grouped: dict[str, dict[str, list[tuple[int, Path]]]] = {}
            for pool in pools:
                if not pool.is_dir():
                    continue
                for p in sorted(pool.iterdir()):
                    if not p.is_file() or p.suffix.lower() not in _IMAGE_EXTS:
                        continue
                    m = pattern.match(p.stem)
                    if not m:
                        continue
                    wid = f"writer_{int(m.group(2)):03d}"
                    label = "genuine" if m.group(1) == "original" else "forgery"
                    grouped.setdefault(wid, {"genuine": [], "forgery": []})
                    grouped[wid][label].append((int(m.group(3)), p))
            writers = {
                wid: WriterFiles(
                    tuple(p for _, p in sorted(parts["genuine"])),
                    tuple(p for _, p in sorted(parts["forgery"])),
                )
                for wid, parts in grouped.items()
                if parts["genuine"]
            }
            if writers:
                return cls(root, writers)
        raise ValueError(f"no recognizable dataset layout under {root}")


# --------------------------------------------------------------------------
# Synthetic signatures
# --------------------------------------------------------------------------


_INK_LEVEL = 20
_CANVAS_MARGIN = 25


def _make_template(rng: np.random.Generator, height: int, width: int,
                   stroke_width: float | None) -> dict:
    n_ctrl = int(rng.integers(6, 11))
    xs = np.linspace(_CANVAS_MARGIN, width - 1 - _CANVAS_MARGIN, n_ctrl)
    xs = np.clip(xs + rng.normal(0.0, 5.0, n_ctrl), 2.0, width - 3.0)
    y0 = height / 2.0 + rng.uniform(-20.0, 20.0)
    steps = rng.uniform(-35.0, 35.0, n_ctrl)
    steps[0] = 0.0
    ys = np.clip(y0 + np.cumsum(steps), _CANVAS_MARGIN, height - 1 - _CANVAS_MARGIN)
    width_px = float(rng.uniform(2.2, 3.4)) if stroke_width is None else float(stroke_width)
    return {"points": np.column_stack([xs, ys]), "width": width_px}


def _affine(points: np.ndarray, angle_deg: float, scale: float,
            shift: np.ndarray) -> np.ndarray:
    centroid = points.mean(axis=0)
    theta = np.deg2rad(angle_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return (points - centroid) @ (scale * rot.T) + centroid + shift


def _render_instance(
    template: dict,
    rng: np.random.Generator,
    height: int,
    width: int,
    jitter: float,
    distortion: float,
) -> np.ndarray:
    """Rasterize one signature instance; ``distortion`` = 0 reproduces the
    genuine-instance distribution (forgeries pass the extra displacement)."""
    pts = template["points"] + rng.normal(0.0, jitter, template["points"].shape)
    angle = rng.normal(0.0, 1.5)
    scale = rng.normal(1.0, 0.015)
    shift = rng.normal(0.0, 2.0, 2)
    stroke = template["width"] + rng.normal(0.0, 0.12)
    if distortion > 0:
        pts = pts + rng.normal(0.0, distortion, pts.shape)
        angle += rng.normal(0.0, 2.0 / 3.0 * distortion)
        scale *= rng.normal(1.0, 0.008 * distortion)
        shift = shift + rng.normal(0.0, 0.6 * distortion, 2)
        stroke += rng.normal(0.0, 0.05 * distortion)
    pts = _affine(pts, angle, max(scale, 0.5), shift)
    stroke = float(np.clip(stroke, 1.2, 6.0))

    t = np.arange(len(pts), dtype=np.float64)
    spline = CubicSpline(t, pts, axis=0)
    approx_len = float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))
    n_samples = max(256, int(3.0 * approx_len))
    samples = spline(np.linspace(0.0, t[-1], n_samples))
    samples[:, 0] = np.clip(samples[:, 0], 1.0, width - 2.0)
    samples[:, 1] = np.clip(samples[:, 1], 1.0, height - 2.0)

    dist = np.full((height, width), np.inf)
    rad = int(np.ceil(stroke / 2.0 + 1.5))
    for x, y in samples:
        r0 = max(int(np.floor(y)) - rad, 0)
        r1 = min(int(np.floor(y)) + rad + 2, height)
        c0 = max(int(np.floor(x)) - rad, 0)
        c1 = min(int(np.floor(x)) + rad + 2, width)
        local = np.hypot(
            np.arange(r0, r1, dtype=np.float64)[:, None] - y,
            np.arange(c0, c1, dtype=np.float64)[None, :] - x,
        )
        np.minimum(dist[r0:r1, c0:c1], local, out=dist[r0:r1, c0:c1])
    alpha = np.clip(stroke / 2.0 + 0.5 - dist, 0.0, 1.0)
    return np.rint(255.0 - alpha * (255.0 - _INK_LEVEL)).astype(np.uint8)


def synth_generate(
    out_dir,
    n_writers: int = 10,
    n_genuine: int = 16,
    n_forgery: int = 16,
    seed: int = 0,
    height: int = 160,
    width: int = 240,
    stroke_width: float | None = None,
    jitter: float = 1.5,
    forgery_distortion: float = 6.0,
) -> DatasetLayout:
    """Write a spline-stroke dataset of ``n_writers`` writers as PGM files.

    Each writer gets a random control-point template; genuine samples add
    small point jitter and a mild affine wobble, forgeries add
    ``forgery_distortion``-sized displacement on top (0 makes them
    statistically indistinguishable from genuine samples).  Deterministic:
    the same arguments always produce byte-identical files.
    """
    if min(n_writers, n_genuine, n_forgery) < 1:
        raise ValueError("counts must be >= 1")
    if min(height, width) < 4 * _CANVAS_MARGIN // 2:
        raise ValueError("canvas too small for the stroke margin")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    writer_seeds = np.random.SeedSequence(seed).spawn(n_writers)
    for w in range(n_writers):
        wdir = out / f"writer_{w + 1:02d}"
        wdir.mkdir(exist_ok=True)
        streams = writer_seeds[w].spawn(1 + n_genuine + n_forgery)
        template = _make_template(
            np.random.default_rng(streams[0]), height, width, stroke_width
        )
        for i in range(n_genuine):
            img = _render_instance(
                template, np.random.default_rng(streams[1 + i]),
                height, width, jitter, 0.0,
            )
            save_gray(wdir / f"genuine_{i + 1:02d}.pgm", img)
        for j in range(n_forgery):
            img = _render_instance(
                template, np.random.default_rng(streams[1 + n_genuine + j]),
                height, width, jitter, forgery_distortion,
            )
            save_gray(wdir / f"forgery_{j + 1:02d}.pgm", img)
    return DatasetLayout.scan(out)


# --------------------------------------------------------------------------
# Per-image pipeline with caching
# --------------------------------------------------------------------------


def _path_noise_seed(config_seed: int, path: Path) -> np.random.SeedSequence:
    key = "/".join(path.parts[-2:])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return np.random.SeedSequence((config_seed, int.from_bytes(digest[:8], "big")))


class _ImageStore:
    """Caches the dictionary-independent artifacts per image path: the
    processed grayscale, ink mask, optimal thinning level, skeletons and
    patch matrices per level, segment maps, and assigned keypoints."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self._gray: dict[str, np.ndarray] = {}
        self._mask: dict[str, np.ndarray] = {}
        self._otl: dict[str, int] = {}
        self._skel: dict[tuple[str, int], object] = {}
        self._patches: dict[tuple[str, int], object] = {}
        self._segments: dict[tuple[str, int], object] = {}
        self._kp_raw: dict[str, object] = {}
        self._kp: dict[tuple[str, int], object] = {}

    def gray(self, path: Path) -> np.ndarray:
        key = str(path)
        if key not in self._gray:
            img = load_gray(path)
            spec = self.config.noise_spec
            if spec.kind != "none":
                img = add_noise(img, spec, _path_noise_seed(self.config.seed, path))
            if self.config.median_on:
                img = median_filter(img)
            self._gray[key] = img
        return self._gray[key]

    def mask(self, path: Path) -> np.ndarray:
        key = str(path)
        if key not in self._mask:
            self._mask[key] = otsu_threshold(self.gray(path))
        return self._mask[key]

    def otl(self, path: Path) -> int:
        key = str(path)
        if key not in self._otl:
            self._otl[key] = optimal_thinning_level(
                self.mask(path), self.config.patch_size
            )[0]
        return self._otl[key]

    def skeleton(self, path: Path, level: int):
        key = (str(path), level)
        if key not in self._skel:
            self._skel[key] = thin_to_level(self.mask(path), level)
        return self._skel[key]

    def patches(self, path: Path, level: int):
        key = (str(path), level)
        if key not in self._patches:
            self._patches[key] = extract_patches(
                self.gray(path),
                self.skeleton(path, level),
                self.config.patch_size,
                center=self.config.center_patches,
            )
        return self._patches[key]

    def segments(self, path: Path, level: int):
        key = (str(path), level)
        if key not in self._segments:
            self._segments[key] = equimass_segment(
                self.skeleton(path, level), self.config.beta
            )
        return self._segments[key]

    def keypoints(self, path: Path, level: int):
        pkey = str(path)
        if pkey not in self._kp_raw:
            cfg = self.config
            self._kp_raw[pkey] = detect_keypoints(
                self.gray(path),
                threshold=cfg.kp_threshold,
                octaves=cfg.kp_octaves,
                arc=cfg.kp_arc,
                max_points=cfg.max_keypoints,
            )
        key = (pkey, level)
        if key not in self._kp:
            self._kp[key] = assign_to_skeleton(
                self._kp_raw[pkey], self.skeleton(path, level)
            )
        return self._kp[key]

    def descriptor(
        self, path: Path, level: int, dictionary: Dictionary
    ) -> SignatureDescriptor:
        cfg = self.config
        codes = _encode(dictionary, self.patches(path, level).data / 255.0, cfg)
        kps = self.keypoints(path, level) if cfg.use_keypoints else None
        return _build(codes, self.skeleton(path, level),
                      self.segments(path, level), kps, cfg)


def _encode(dictionary: Dictionary, data: np.ndarray, cfg: ExperimentConfig):
    positive = cfg.prior in ("a-positive", "nmf")
    if cfg.solver == "omp":
        return omp_encode(dictionary, data, cfg.rho, positive=positive)
    return lars_lasso_encode(dictionary, data, cfg.lam, positive=positive)


def _build(codes, skel, segments, kps, cfg: ExperimentConfig) -> SignatureDescriptor:
    if kps is None:
        # Keypoints disabled by configuration: the zeroed block is expected,
        # so the per-image degenerate flag would be noise.
        import warnings

        with warnings.catch_warnings():
            warnings.filterwarnings(
                "ignore", message="no keypoints", category=DegenerateInputWarning
            )
            return build_descriptor(codes, skel, segments, None, cfg.pooling)
    return build_descriptor(codes, skel, segments, kps, cfg.pooling)


def _learn_dictionary(
    ref_mats: list[np.ndarray], cfg: ExperimentConfig, seed: int
) -> Dictionary:
    if cfg.solver == "omp":
        dictionary = ksvd_fit(
            ref_mats[0], cfg.n_atoms, cfg.rho, iters=cfg.ksvd_iters, seed=seed
        )
        for mat in ref_mats[1:]:
            dictionary = ksvd_update(dictionary, mat, cfg.rho, iters=cfg.cascade_iters)
        return dictionary
    prior = None if cfg.prior == "none" else cfg.prior
    return online_fit(
        ref_mats,
        cfg.n_atoms,
        cfg.lam,
        minibatch=cfg.minibatch,
        time_budget=float("inf"),
        max_batches=cfg.online_batches,
        prior=prior,
        seed=seed,
    )


def image_descriptor(
    img: np.ndarray, dictionary: Dictionary, level: int, cfg: ExperimentConfig
) -> SignatureDescriptor:
    """Full single-image pipeline on an already-loaded grayscale image."""
    mask = otsu_threshold(img)
    skel = thin_to_level(mask, level)
    pm = extract_patches(img, skel, cfg.patch_size, center=cfg.center_patches)
    codes = _encode(dictionary, pm.data / 255.0, cfg)
    segments = equimass_segment(skel, cfg.beta)
    kps = None
    if cfg.use_keypoints:
        kps = assign_to_skeleton(
            detect_keypoints(
                img,
                threshold=cfg.kp_threshold,
                octaves=cfg.kp_octaves,
                arc=cfg.kp_arc,
                max_points=cfg.max_keypoints,
            ),
            skel,
        )
    return _build(codes, skel, segments, kps, cfg)


# --------------------------------------------------------------------------
# Protocol
# --------------------------------------------------------------------------


def _round_robin_negatives(
    layout: DatasetLayout,
    writer_id: str,
    count: int,
    rng: np.random.Generator,
) -> list[Path]:
    """Draw ``count`` other-writer genuine files, one per writer per lap."""
    others = [w for w in layout.writer_ids if w != writer_id]
    if not others:
        raise ValueError("need at least one other writer for negatives")
    shuffled: dict[str, list[Path]] = {}
    for w in others:
        paths = list(layout.writers[w].genuine)
        shuffled[w] = [paths[i] for i in rng.permutation(len(paths))]
    order = [others[i] for i in rng.permutation(len(others))]
    picked: list[Path] = []
    depth = 0
    while len(picked) < count:
        progressed = False
        for w in order:
            bucket = shuffled[w]
            if depth < len(bucket):
                picked.append(bucket[depth])
                progressed = True
                if len(picked) == count:
                    return picked
        if not progressed:
            raise ValueError(
                f"other writers hold too few genuine samples for {count} negatives"
            )
        depth += 1
    return picked


def _random_pool(
    layout: DatasetLayout,
    writer_id: str,
    used: set[str],
    per_writer: int,
    rng: np.random.Generator,
) -> list[Path]:
    """``per_writer`` genuine files from each other writer, preferring ones
    not already spent as negatives."""
    picked: list[Path] = []
    for w in [x for x in layout.writer_ids if x != writer_id]:
        paths = list(layout.writers[w].genuine)
        shuffled = [paths[i] for i in rng.permutation(len(paths))]
        fresh = [p for p in shuffled if str(p) not in used]
        spent = [p for p in shuffled if str(p) in used]
        picked.extend((fresh + spent)[:per_writer])
    return picked


def enroll_writer(
    writer_id: str,
    ref_paths: list[Path],
    negative_paths: list[Path],
    cfg: ExperimentConfig,
    store: _ImageStore | None = None,
    dict_seed: int | None = None,
    svm_seed: int | None = None,
) -> WriterModel:
    """Build a writer model from explicit reference/negative image files."""
    store = store or _ImageStore(cfg)
    if dict_seed is None or svm_seed is None:
        streams = np.random.SeedSequence(cfg.seed).spawn(2)
        dict_seed = int(streams[0].generate_state(1)[0]) if dict_seed is None else dict_seed
        svm_seed = int(streams[1].generate_state(1)[0]) if svm_seed is None else svm_seed
    ref_paths = [Path(p) for p in ref_paths]
    negative_paths = [Path(p) for p in negative_paths]
    if len(ref_paths) < 2:
        raise ValueError("need at least two reference images")
    if len(negative_paths) != 2 * len(ref_paths):
        raise ValueError("need exactly twice as many negative images as references")

    otls = [store.otl(p) for p in ref_paths]
    level = sorted(otls)[(len(otls) - 1) // 2]  # lower median
    ref_mats = [store.patches(p, level).data / 255.0 for p in ref_paths]
    dictionary = _learn_dictionary(ref_mats, cfg, dict_seed)

    positives = np.vstack(
        [store.descriptor(p, level, dictionary).values for p in ref_paths]
    )
    negatives = np.vstack(
        [store.descriptor(p, level, dictionary).values for p in negative_paths]
    )
    features = LabeledFeatureSet(
        positives,
        negatives,
        positive_ids=tuple(str(p) for p in ref_paths),
        negative_ids=tuple(str(p) for p in negative_paths),
    )
    verifier = train_svm(
        features,
        grid=cfg.grid,
        holdout_fraction=cfg.holdout_fraction,
        seed=svm_seed,
        standardize=cfg.standardize,
    )
    return WriterModel(
        writer_id=writer_id,
        dictionary=dictionary,
        motl=level,
        verifier=verifier,
        config=cfg.as_dict(),
        seed=cfg.seed,
    )


def _run_writer(
    repetition: int,
    writer_id: str,
    wss: np.random.SeedSequence,
    layout: DatasetLayout,
    store: _ImageStore,
    cfg: ExperimentConfig,
):
    streams = wss.spawn(5)  # refs, negatives, dictionary, svm, random pool
    files = layout.writers[writer_id]
    if len(files.genuine) < cfg.n_g_ref + 1:
        raise ValueError(
            f"{len(files.genuine)} genuine samples; need n_g_ref+1 = {cfg.n_g_ref + 1}"
        )
    if not files.forgery:
        raise ValueError("no skilled forgeries")

    ref_rng = np.random.default_rng(streams[0])
    perm = ref_rng.permutation(len(files.genuine))
    refs = [files.genuine[i] for i in perm[: cfg.n_g_ref]]
    eval_genuine = [files.genuine[i] for i in perm[cfg.n_g_ref :]]

    negatives = _round_robin_negatives(
        layout, writer_id, 2 * cfg.n_g_ref, np.random.default_rng(streams[1])
    )
    model = enroll_writer(
        writer_id,
        refs,
        negatives,
        cfg,
        store=store,
        dict_seed=int(streams[2].generate_state(1)[0]),
        svm_seed=int(streams[3].generate_state(1)[0]),
    )
    clf = model.verifier.classifier
    level = model.motl

    def decide(paths: list[Path]) -> np.ndarray:
        if not paths:
            return np.empty(0)
        descs = np.vstack(
            [store.descriptor(p, level, model.dictionary).values for p in paths]
        )
        return clf.decision(descs)

    random_paths: list[Path] = []
    if cfg.n_random_per_writer > 0:
        random_paths = _random_pool(
            layout,
            writer_id,
            {str(p) for p in negatives},
            cfg.n_random_per_writer,
            np.random.default_rng(streams[4]),
        )
    scores = ScoreSet(
        genuine=decide(eval_genuine),
        skilled=decide(list(files.forgery)),
        random=decide(random_paths),
    )
    return compute_writer_metrics(
        writer_id, scores, repetition, hard_threshold=model.hard_threshold
    )


def run_experiment(
    data_dir,
    cfg: ExperimentConfig,
    out_root=None,
    log=None,
) -> tuple[MetricsReport, Path | None]:
    """Run the full protocol; optionally write the stamped run directory
    (``run_<confighash>_s<seed>/`` holding config.txt, per_writer.csv,
    summary.json).  Returns the report and the run directory, if any.

    Writers failing a repetition's preconditions are skipped with a logged
    reason; the run fails only if nothing at all could be evaluated.
    """
    layout = data_dir if isinstance(data_dir, DatasetLayout) else DatasetLayout.scan(data_dir)
    if len(layout.writer_ids) < 2:
        raise ValueError("need at least two writers")
    store = _ImageStore(cfg)
    started = time.time()
    rows, skipped = [], []
    rep_seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.repetitions)
    for rep in range(cfg.repetitions):
        writer_seeds = rep_seeds[rep].spawn(len(layout.writer_ids))
        for wi, writer_id in enumerate(layout.writer_ids):
            try:
                row = _run_writer(rep, writer_id, writer_seeds[wi], layout, store, cfg)
            except ValueError as exc:
                skipped.append(
                    {"writer": writer_id, "repetition": rep, "reason": str(exc)}
                )
                if log:
                    log(f"rep {rep + 1}/{cfg.repetitions} {writer_id}: skipped ({exc})")
                continue
            rows.append(row)
            if log:
                rnd = "-" if row.eer_random is None else f"{row.eer_random:.1f}%"
                log(
                    f"rep {rep + 1}/{cfg.repetitions} {writer_id}: "
                    f"EER_S={row.eer_skilled:.1f}% EER_R={rnd}"
                )
    if not rows:
        raise ValueError("every writer was skipped; nothing to report")
    report = MetricsReport.from_rows(rows, skipped)
    run_dir = None
    if out_root is not None:
        run_dir = Path(out_root) / f"run_{cfg.hash12}_s{cfg.seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.txt").write_text(cfg.to_text())
        report.write_csv(run_dir / "per_writer.csv")
        report.write_summary(
            run_dir / "summary.json",
            extra={
                "config_hash": cfg.hash12,
                "seed": cfg.seed,
                "data_dir": str(Path(layout.root).resolve()),
                "elapsed_seconds": round(time.time() - started, 3),
            },
        )
    return report, run_dir
