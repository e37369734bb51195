"""Writer-dependent verification: a hand-rolled RBF SVM trained per writer.

The learning set pairs the writer's reference descriptors (positives)
against twice as many genuine descriptors from other writers (negatives).
Hyperparameters come from a log2 grid over (C, gamma), scored by ranking
AUC on a stratified holdout split; the winning cell's holdout scores of the
positive samples are kept (``cvs_plus``) and drive the writer's hard
acceptance threshold, half their mean.  The final classifier is refit on
the full learning set at the selected cell.

The dual problem is solved with a Platt-style SMO: sweep the samples,
pick a random partner for each KKT violator, and update the pair
analytically, until a full sweep makes no progress (tolerance 1e-3,
bounded passes).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .descriptor import SignatureDescriptor
from .sparse import Dictionary

__all__ = [
    "LabeledFeatureSet",
    "SvmClassifier",
    "VerifierModel",
    "WriterModel",
    "auc_score",
    "train_svm",
    "score",
    "hard_threshold",
    "default_grid",
    "save_writer_model",
    "load_writer_model",
]

SMO_TOL = 1e-3
SMO_MAX_PASSES = 10
SMO_SWEEP_CAP = 500


@dataclass(frozen=True)
class LabeledFeatureSet:
    """Per-writer learning set with the 1:2 positive:negative protocol."""

    positives: np.ndarray
    negatives: np.ndarray
    positive_ids: tuple[str, ...] = ()
    negative_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        pos = np.atleast_2d(np.asarray(self.positives, dtype=np.float64))
        neg = np.atleast_2d(np.asarray(self.negatives, dtype=np.float64))
        if pos.shape[0] < 2:
            raise ValueError("need at least two positive samples")
        if neg.shape[0] != 2 * pos.shape[0]:
            raise ValueError(
                f"negative class must be exactly twice the positive class "
                f"({neg.shape[0]} != 2*{pos.shape[0]})"
            )
        if pos.shape[1] != neg.shape[1]:
            raise ValueError("positive/negative feature dimensions differ")
        if not (np.isfinite(pos).all() and np.isfinite(neg).all()):
            raise ValueError("features contain non-finite values")
        object.__setattr__(self, "positives", pos)
        object.__setattr__(self, "negatives", neg)
        object.__setattr__(self, "positive_ids", tuple(self.positive_ids))
        object.__setattr__(self, "negative_ids", tuple(self.negative_ids))

    @property
    def dim(self) -> int:
        return self.positives.shape[1]


def default_grid() -> tuple[np.ndarray, np.ndarray]:
    """(C values 2^-3..2^7, gamma values 2^-9..2^3)."""
    return 2.0 ** np.arange(-3, 8), 2.0 ** np.arange(-9, 4)


def _rbf(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = (
        np.einsum("id,id->i", a, a)[:, None]
        - 2.0 * (a @ b.T)
        + np.einsum("id,id->i", b, b)[None, :]
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def _smo_train(
    kernel: np.ndarray,
    y: np.ndarray,
    c: float,
    rng: np.random.Generator,
    tol: float = SMO_TOL,
    max_passes: int = SMO_MAX_PASSES,
) -> tuple[np.ndarray, float]:
    """Solve the dual on a precomputed kernel; returns (alpha, bias)."""
    m = len(y)
    alpha = np.zeros(m)
    bias = 0.0
    passes = 0
    sweeps = 0
    while passes < max_passes and sweeps < SMO_SWEEP_CAP:
        sweeps += 1
        changed = 0
        for i in range(m):
            err_i = float((alpha * y) @ kernel[:, i]) + bias - y[i]
            if not (
                (y[i] * err_i < -tol and alpha[i] < c)
                or (y[i] * err_i > tol and alpha[i] > 0)
            ):
                continue
            j = int(rng.integers(m - 1))
            if j >= i:
                j += 1
            err_j = float((alpha * y) @ kernel[:, j]) + bias - y[j]
            ai_old, aj_old = alpha[i], alpha[j]
            if y[i] != y[j]:
                low, high = max(0.0, aj_old - ai_old), min(c, c + aj_old - ai_old)
            else:
                low, high = max(0.0, ai_old + aj_old - c), min(c, ai_old + aj_old)
            if high - low < 1e-12:
                continue
            eta = 2.0 * kernel[i, j] - kernel[i, i] - kernel[j, j]
            if eta >= 0:
                continue
            aj = np.clip(aj_old - y[j] * (err_i - err_j) / eta, low, high)
            if abs(aj - aj_old) < 1e-7:
                continue
            ai = ai_old + y[i] * y[j] * (aj_old - aj)
            alpha[i], alpha[j] = ai, aj
            b1 = (
                bias - err_i
                - y[i] * (ai - ai_old) * kernel[i, i]
                - y[j] * (aj - aj_old) * kernel[i, j]
            )
            b2 = (
                bias - err_j
                - y[i] * (ai - ai_old) * kernel[i, j]
                - y[j] * (aj - aj_old) * kernel[j, j]
            )
            if 0 < ai < c:
                bias = b1
            elif 0 < aj < c:
                bias = b2
            else:
                bias = 0.5 * (b1 + b2)
            changed += 1
        passes = passes + 1 if changed == 0 else 0
    return alpha, float(bias)


@dataclass
class SvmClassifier:
    """RBF SVM in decision form: support vectors live in standardized space;
    ``decision`` standardizes inputs with the stored statistics first."""

    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i per support vector
    bias: float
    gamma: float
    C: float
    mean: np.ndarray
    std: np.ndarray
    standardize: bool = True

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.mean.size:
            raise ValueError(
                f"descriptor length {x.shape[1]} does not match the model "
                f"({self.mean.size})"
            )
        return (x - self.mean) / self.std if self.standardize else x

    def decision(self, x: np.ndarray) -> np.ndarray:
        xs = self.transform(x)
        return _rbf(xs, self.support_vectors, self.gamma) @ self.dual_coef + self.bias


def auc_score(pos_scores, neg_scores) -> float:
    """Pairwise-concordance (ranking) AUC with half credit for ties."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need scores from both classes")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


@dataclass
class VerifierModel:
    """Classifier plus the validation by-products the protocol keeps."""

    classifier: SvmClassifier
    cvs_plus: np.ndarray
    auc: float
    seed: int

    @property
    def hard_threshold(self) -> float:
        return 0.5 * float(np.mean(self.cvs_plus))


@dataclass
class WriterModel:
    """Everything needed to verify claims for one writer."""

    writer_id: str
    dictionary: Dictionary
    motl: int
    verifier: VerifierModel
    config: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def hard_threshold(self) -> float:
        return self.verifier.hard_threshold

    def experiment_config(self):
        """Rebuild the typed configuration stored with the model.

        ``config`` is kept as a plain dict so the model file stays
        self-describing JSON; this restores the object that descriptor
        builders expect.
        """
        from .harness import ExperimentConfig  # harness imports this module

        return ExperimentConfig(**self.config) if self.config else ExperimentConfig()


def _stratified_split(
    n_pos: int, n_neg: int, holdout_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """(train indices, holdout indices) into the stacked [pos; neg] array."""
    hold_pos = min(max(1, round(holdout_fraction * n_pos)), n_pos - 1)
    hold_neg = min(max(1, round(holdout_fraction * n_neg)), n_neg - 1)
    pos_perm = rng.permutation(n_pos)
    neg_perm = n_pos + rng.permutation(n_neg)
    hold = np.concatenate([pos_perm[:hold_pos], neg_perm[:hold_neg]])
    train = np.concatenate([pos_perm[hold_pos:], neg_perm[hold_neg:]])
    return np.sort(train), np.sort(hold)


def train_svm(
    features: LabeledFeatureSet,
    grid: tuple[np.ndarray, np.ndarray] | None = None,
    holdout_fraction: float = 0.3,
    seed: int = 0,
    standardize: bool = True,
) -> VerifierModel:
    """Grid-search (C, gamma) by holdout AUC, then refit on everything.

    Ties on AUC resolve to the cell whose positive holdout samples score
    highest on average: ranking-equivalent cells can still differ wildly in
    decision-value calibration, and the stored hard threshold is half that
    mean, so the degenerate small-(C, gamma) corner (scores compressed below
    zero) must lose the tie.  Remaining ties take the first cell in
    C-ascending, gamma-ascending order.  The returned ``cvs_plus`` holds the
    winning cell's decision scores on the positive holdout samples.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must be in (0, 1)")
    c_values, gamma_values = grid if grid is not None else default_grid()
    c_values = np.asarray(c_values, dtype=np.float64)
    gamma_values = np.asarray(gamma_values, dtype=np.float64)
    if c_values.size == 0 or gamma_values.size == 0:
        raise ValueError("empty hyperparameter grid")

    x = np.vstack([features.positives, features.negatives])
    y = np.concatenate(
        [np.ones(len(features.positives)), -np.ones(len(features.negatives))]
    )
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    if not standardize:
        mean = np.zeros_like(mean)
        std = np.ones_like(std)
    xs = (x - mean) / std

    root = np.random.SeedSequence(seed)
    split_ss, cell_ss, final_ss = root.spawn(3)
    split_rng = np.random.default_rng(split_ss)
    for _ in range(5):
        train_idx, hold_idx = _stratified_split(
            len(features.positives), len(features.negatives), holdout_fraction, split_rng
        )
        if len(np.unique(y[train_idx])) == 2 and len(np.unique(y[hold_idx])) == 2:
            break
    else:
        raise ValueError("could not form a two-class holdout split")

    x_train, y_train = xs[train_idx], y[train_idx]
    x_hold, y_hold = xs[hold_idx], y[hold_idx]
    sq_train = (
        np.einsum("id,id->i", x_train, x_train)[:, None]
        - 2.0 * (x_train @ x_train.T)
        + np.einsum("id,id->i", x_train, x_train)[None, :]
    )
    sq_cross = (
        np.einsum("id,id->i", x_hold, x_hold)[:, None]
        - 2.0 * (x_hold @ x_train.T)
        + np.einsum("id,id->i", x_train, x_train)[None, :]
    )

    cell_seeds = cell_ss.spawn(c_values.size * gamma_values.size)
    aucs = np.empty((c_values.size, gamma_values.size))
    hold_scores = np.empty((c_values.size, gamma_values.size, len(hold_idx)))
    for gi, gamma in enumerate(gamma_values):
        k_train = np.exp(-gamma * np.maximum(sq_train, 0.0))
        k_cross = np.exp(-gamma * np.maximum(sq_cross, 0.0))
        for ci, c in enumerate(c_values):
            rng = np.random.default_rng(cell_seeds[ci * gamma_values.size + gi])
            alpha, bias = _smo_train(k_train, y_train, float(c), rng)
            scores = k_cross @ (alpha * y_train) + bias
            hold_scores[ci, gi] = scores
            aucs[ci, gi] = auc_score(scores[y_hold > 0], scores[y_hold < 0])

    mean_pos = hold_scores[:, :, y_hold > 0].mean(axis=2)
    tied = np.flatnonzero((aucs == aucs.max()).ravel())  # C-major order
    best = int(tied[np.argmax(mean_pos.ravel()[tied])])
    ci, gi = divmod(best, gamma_values.size)
    c_opt, gamma_opt = float(c_values[ci]), float(gamma_values[gi])
    cvs_plus = hold_scores[ci, gi][y_hold > 0].copy()

    kernel_full = np.exp(
        -gamma_opt
        * np.maximum(
            np.einsum("id,id->i", xs, xs)[:, None]
            - 2.0 * (xs @ xs.T)
            + np.einsum("id,id->i", xs, xs)[None, :],
            0.0,
        )
    )
    alpha, bias = _smo_train(kernel_full, y, c_opt, np.random.default_rng(final_ss))
    sv = np.flatnonzero(alpha > 1e-12)
    if sv.size == 0:  # fully non-separating corner case: keep all points
        sv = np.arange(len(y))
    classifier = SvmClassifier(
        support_vectors=xs[sv].copy(),
        dual_coef=(alpha * y)[sv].copy(),
        bias=bias,
        gamma=gamma_opt,
        C=c_opt,
        mean=mean,
        std=std,
        standardize=standardize,
    )
    return VerifierModel(classifier, cvs_plus, float(aucs[ci, gi]), int(seed))


def _classifier_of(model) -> SvmClassifier:
    if isinstance(model, WriterModel):
        return model.verifier.classifier
    if isinstance(model, VerifierModel):
        return model.classifier
    if isinstance(model, SvmClassifier):
        return model
    raise TypeError(f"cannot score with a {type(model).__name__}")


def score(model, descriptor) -> float | np.ndarray:
    """Decision value(s) for one descriptor or a (m, d) batch."""
    if isinstance(descriptor, SignatureDescriptor):
        descriptor = descriptor.values
    descriptor = np.asarray(descriptor, dtype=np.float64)
    single = descriptor.ndim == 1
    values = _classifier_of(model).decision(descriptor)
    return float(values[0]) if single else values


def hard_threshold(model) -> float:
    """Writer acceptance threshold: half the mean positive validation score."""
    if isinstance(model, WriterModel):
        model = model.verifier
    if not isinstance(model, VerifierModel):
        raise TypeError("hard_threshold needs a verifier or writer model")
    return model.hard_threshold


# --------------------------------------------------------------------------
# Writer model file format
# --------------------------------------------------------------------------
#
# Little-endian layout: magic b"SSWM", uint32 version (1), uint32 JSON
# header length, that many JSON bytes, then the float64 arrays back to back
# in the order listed by the header's "arrays" entry (name -> shape).
# The header carries writer_id, motl, SVM scalars, the dictionary
# constraint, and the config snapshot.

_MODEL_MAGIC = b"SSWM"
_MODEL_VERSION = 1


def save_writer_model(path: str | os.PathLike, model: WriterModel) -> None:
    clf = model.verifier.classifier
    arrays = {
        "atoms": model.dictionary.atoms,
        "support_vectors": clf.support_vectors,
        "dual_coef": clf.dual_coef,
        "mean": clf.mean,
        "std": clf.std,
        "cvs_plus": np.asarray(model.verifier.cvs_plus, dtype=np.float64),
    }
    header = {
        "writer_id": model.writer_id,
        "motl": int(model.motl),
        "bias": clf.bias,
        "gamma": clf.gamma,
        "C": clf.C,
        "standardize": bool(clf.standardize),
        "auc": model.verifier.auc,
        "svm_seed": model.verifier.seed,
        "seed": model.seed,
        "constraint_tag": model.dictionary.constraint_tag,
        "config": model.config,
        "arrays": {name: list(arr.shape) for name, arr in arrays.items()},
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<II", _MODEL_VERSION, len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())


def load_writer_model(path: str | os.PathLike) -> WriterModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _MODEL_MAGIC:
            raise ValueError("not a writer model file (bad magic)")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != _MODEL_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for name, shape in header["arrays"].items():
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ValueError("truncated writer model file")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    classifier = SvmClassifier(
        support_vectors=arrays["support_vectors"],
        dual_coef=arrays["dual_coef"],
        bias=float(header["bias"]),
        gamma=float(header["gamma"]),
        C=float(header["C"]),
        mean=arrays["mean"],
        std=arrays["std"],
        standardize=bool(header["standardize"]),
    )
    verifier = VerifierModel(
        classifier,
        arrays["cvs_plus"],
        float(header["auc"]),
        int(header["svm_seed"]),
    )
    dictionary = Dictionary(arrays["atoms"], header["constraint_tag"])
    return WriterModel(
        writer_id=header["writer_id"],
        dictionary=dictionary,
        motl=int(header["motl"]),
        verifier=verifier,
        config=header.get("config", {}),
        seed=header.get("seed"),
    )
