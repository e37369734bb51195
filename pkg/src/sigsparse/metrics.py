"""Verification error rates: FAR/FRR sweeps, equal-error rates, aggregation.

Conventions (all rates in percent):

* A sample is *accepted* when its score is >= the threshold.
* FAR = percentage of forgery scores accepted; FRR = percentage of genuine
  scores rejected.  FAR falls and FRR rises as the threshold sweeps upward,
  so their crossing defines the equal-error rate (EER), located by linear
  interpolation between the two bracketing thresholds.
* Skilled and random forgeries are scored separately; ``p_far_r_at_eer_s``
  reports the random-forgery FAR measured at the skilled-EER threshold.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ScoreSet",
    "WriterMetrics",
    "MetricsReport",
    "far_frr_curve",
    "eer",
    "eer_from_curve",
    "far_at",
    "frr_at",
    "p_far_r_at_eer_s",
    "compute_writer_metrics",
    "aggregate_metrics",
]


@dataclass(frozen=True)
class ScoreSet:
    """Decision scores for one writer in one repetition."""

    genuine: np.ndarray
    skilled: np.ndarray
    random: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self) -> None:
        for name in ("genuine", "skilled", "random"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if arr.size and not np.isfinite(arr).all():
                raise ValueError(f"{name} scores contain non-finite values")
            object.__setattr__(self, name, arr)
        if self.genuine.size == 0:
            raise ValueError("need at least one genuine score")
        if self.skilled.size == 0:
            raise ValueError("need at least one skilled-forgery score")

    def forgery(self, kind: str) -> np.ndarray:
        if kind not in ("skilled", "random"):
            raise ValueError("forgery kind must be 'skilled' or 'random'")
        return getattr(self, kind)

    def curve(self, kind: str = "skilled"):
        """FAR/FRR sweep against the chosen forgery class."""
        return far_frr_curve(self.genuine, self.forgery(kind))


def far_at(forgery: np.ndarray, threshold: float) -> float:
    """Percent of forgery scores at or above the threshold."""
    forgery = np.asarray(forgery, dtype=np.float64)
    if forgery.size == 0:
        raise ValueError("no forgery scores")
    return 100.0 * float(np.count_nonzero(forgery >= threshold)) / forgery.size


def frr_at(genuine: np.ndarray, threshold: float) -> float:
    """Percent of genuine scores below the threshold."""
    genuine = np.asarray(genuine, dtype=np.float64)
    if genuine.size == 0:
        raise ValueError("no genuine scores")
    return 100.0 * float(np.count_nonzero(genuine < threshold)) / genuine.size


def far_frr_curve(
    genuine: np.ndarray, forgery: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, FAR%, FRR%) over every distinct observed score,
    bracketed by sentinels below the minimum and above the maximum so the
    curve always starts at (FAR=100, FRR=0) and ends at (FAR=0, FRR=100).
    """
    genuine = np.asarray(genuine, dtype=np.float64).ravel()
    forgery = np.asarray(forgery, dtype=np.float64).ravel()
    if genuine.size == 0 or forgery.size == 0:
        raise ValueError("need scores from both classes")
    pooled = np.unique(np.concatenate([genuine, forgery]))
    span = pooled[-1] - pooled[0]
    eps = 1e-6 * span if span > 0 else 1e-6
    thresholds = np.concatenate([[pooled[0] - eps], pooled, [pooled[-1] + eps]])
    g_sorted = np.sort(genuine)
    f_sorted = np.sort(forgery)
    # accepted forgeries: count of f >= t;  rejected genuines: count of g < t
    far = 100.0 * (f_sorted.size - np.searchsorted(f_sorted, thresholds, "left"))
    frr = 100.0 * np.searchsorted(g_sorted, thresholds, "left")
    return thresholds, far / f_sorted.size, frr / g_sorted.size


def eer_from_curve(
    thresholds: np.ndarray, far: np.ndarray, frr: np.ndarray
) -> tuple[float, float]:
    """(EER percent, threshold) by linear interpolation of FAR - FRR.

    FAR - FRR is non-increasing along the swept thresholds; the EER sits
    where it crosses zero.  When the sign change falls between two curve
    points, both FAR and the threshold are interpolated linearly.
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    far = np.asarray(far, dtype=np.float64)
    frr = np.asarray(frr, dtype=np.float64)
    d = far - frr
    idx = int(np.argmax(d <= 0.0))  # first index where the difference <= 0
    if d[idx] > 0.0:  # never crossed (cannot happen with sentinels)
        return float(0.5 * (far[-1] + frr[-1])), float(thresholds[-1])
    if d[idx] == 0.0 or idx == 0:
        return float(far[idx]), float(thresholds[idx])
    frac = d[idx - 1] / (d[idx - 1] - d[idx])
    rate = far[idx - 1] + frac * (far[idx] - far[idx - 1])
    thr = thresholds[idx - 1] + frac * (thresholds[idx] - thresholds[idx - 1])
    return float(rate), float(thr)


def eer(genuine: np.ndarray, forgery: np.ndarray) -> tuple[float, float]:
    """(EER percent, threshold) for one genuine-vs-forgery score pair."""
    return eer_from_curve(*far_frr_curve(genuine, forgery))


def p_far_r_at_eer_s(scores: ScoreSet) -> float:
    """Random-forgery FAR measured at the skilled-EER threshold."""
    if scores.random.size == 0:
        raise ValueError("no random-forgery scores")
    _, threshold = eer(scores.genuine, scores.skilled)
    return far_at(scores.random, threshold)


@dataclass(frozen=True)
class WriterMetrics:
    """One writer's error rates in one repetition."""

    writer_id: str
    repetition: int
    eer_skilled: float
    threshold_eer_skilled: float
    far_skilled_eer_t: float
    frr_eer_t: float
    eer_random: float | None
    far_random_at_eer_skilled: float | None
    hard_threshold: float | None = None
    far_skilled_hard: float | None = None
    frr_hard: float | None = None
    far_random_hard: float | None = None

    def as_row(self) -> dict:
        return {
            "writer": self.writer_id,
            "repetition": self.repetition,
            "eer_skilled": self.eer_skilled,
            "threshold_eer_skilled": self.threshold_eer_skilled,
            "far_skilled_eer_t": self.far_skilled_eer_t,
            "frr_eer_t": self.frr_eer_t,
            "eer_random": self.eer_random,
            "far_random_at_eer_skilled": self.far_random_at_eer_skilled,
            "hard_threshold": self.hard_threshold,
            "far_skilled_hard": self.far_skilled_hard,
            "frr_hard": self.frr_hard,
            "far_random_hard": self.far_random_hard,
        }


def compute_writer_metrics(
    writer_id: str,
    scores: ScoreSet,
    repetition: int = 0,
    hard_threshold: float | None = None,
) -> WriterMetrics:
    """Skilled/random EERs plus operating rates at both threshold choices
    (the interpolated skilled-EER threshold and the writer's hard one)."""
    eer_s, thr_s = eer(scores.genuine, scores.skilled)
    eer_r: float | None = None
    far_r_at_s: float | None = None
    if scores.random.size:
        eer_r, _ = eer(scores.genuine, scores.random)
        far_r_at_s = far_at(scores.random, thr_s)
    far_s_hard = frr_hard = far_r_hard = None
    if hard_threshold is not None:
        far_s_hard = far_at(scores.skilled, hard_threshold)
        frr_hard = frr_at(scores.genuine, hard_threshold)
        if scores.random.size:
            far_r_hard = far_at(scores.random, hard_threshold)
    return WriterMetrics(
        writer_id=writer_id,
        repetition=repetition,
        eer_skilled=eer_s,
        threshold_eer_skilled=thr_s,
        far_skilled_eer_t=far_at(scores.skilled, thr_s),
        frr_eer_t=frr_at(scores.genuine, thr_s),
        eer_random=eer_r,
        far_random_at_eer_skilled=far_r_at_s,
        hard_threshold=hard_threshold,
        far_skilled_hard=far_s_hard,
        frr_hard=frr_hard,
        far_random_hard=far_r_hard,
    )


_AGG_FIELDS = (
    "eer_skilled",
    "far_skilled_eer_t",
    "frr_eer_t",
    "eer_random",
    "far_random_at_eer_skilled",
    "far_skilled_hard",
    "frr_hard",
    "far_random_hard",
)


def aggregate_metrics(rows: list[WriterMetrics]) -> dict:
    """Mean of per-repetition means (each repetition first averaged over
    its writers, then repetitions averaged), per metric; None where a
    metric was reported by no writer."""
    if not rows:
        raise ValueError("no metrics rows to aggregate")
    by_rep: dict[int, list[WriterMetrics]] = {}
    for row in rows:
        by_rep.setdefault(row.repetition, []).append(row)
    out: dict[str, float | None] = {}
    for name in _AGG_FIELDS:
        rep_means = []
        for rep_rows in by_rep.values():
            vals = [getattr(r, name) for r in rep_rows if getattr(r, name) is not None]
            if vals:
                rep_means.append(float(np.mean(vals)))
        out[name] = float(np.mean(rep_means)) if rep_means else None
    out["n_writers"] = len({r.writer_id for r in rows})
    out["n_repetitions"] = len(by_rep)
    out["n_rows"] = len(rows)
    return out


@dataclass
class MetricsReport:
    """Everything a run reports: per-writer rows, the aggregate, skips."""

    rows: list[WriterMetrics]
    aggregate: dict
    skipped: list[dict] = field(default_factory=list)

    @classmethod
    def from_rows(
        cls, rows: list[WriterMetrics], skipped: list[dict] | None = None
    ) -> "MetricsReport":
        return cls(rows, aggregate_metrics(rows), list(skipped or []))

    def write_csv(self, path: str | os.PathLike) -> None:
        fields = [
            "writer",
            "repetition",
            "eer_skilled",
            "threshold_eer_skilled",
            "far_skilled_eer_t",
            "frr_eer_t",
            "eer_random",
            "far_random_at_eer_skilled",
            "hard_threshold",
            "far_skilled_hard",
            "frr_hard",
            "far_random_hard",
        ]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(
                    {k: ("" if v is None else v) for k, v in row.as_row().items()}
                )

    def write_summary(self, path: str | os.PathLike, extra: dict | None = None) -> None:
        payload = {"aggregate": self.aggregate, "skipped": self.skipped}
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
