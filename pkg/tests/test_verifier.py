"""Writer verifier: SMO optimality, AUC oracle, grid selection, thresholds,
and model serialization."""

from __future__ import annotations

import numpy as np
import pytest

from sigsparse import (
    Dictionary,
    LabeledFeatureSet,
    SvmClassifier,
    VerifierModel,
    WriterModel,
    auc_score,
    default_grid,
    hard_threshold,
    load_writer_model,
    save_writer_model,
    score,
    train_svm,
)
from sigsparse.verifier import _rbf, _smo_train

from conftest import random_dictionary_atoms


def blob_features(seed, n_pos=8, dim=6, gap=2.4):
    """Linearly separable positive/negative blobs (negatives = 2x positives)."""
    rng = np.random.default_rng(seed)
    pos = rng.normal(loc=+gap / 2, size=(n_pos, dim))
    neg = rng.normal(loc=-gap / 2, size=(2 * n_pos, dim))
    return LabeledFeatureSet(pos, neg)


# --------------------------------------------------------------------------
# SMO core
# --------------------------------------------------------------------------


def test_smo_satisfies_kkt_within_tolerance():
    for trial in range(10):
        rng = np.random.default_rng(trial)
        pos = rng.normal(loc=+1.2, size=(12, 4))
        neg = rng.normal(loc=-1.2, size=(24, 4))
        x = np.vstack([pos, neg])
        y = np.r_[np.ones(12), -np.ones(24)]
        c, gamma = 4.0, 0.25
        kernel = _rbf(x, x, gamma)
        alpha, bias = _smo_train(kernel, y, c, np.random.default_rng(trial + 100))
        f = (alpha * y) @ kernel + bias
        margin = y * f - 1.0
        # Box constraints and the dual equality constraint.
        assert alpha.min() >= -1e-12 and alpha.max() <= c + 1e-12
        assert abs(np.sum(alpha * y)) <= 1e-9
        # Stationarity within the working tolerance: non-bound multipliers
        # sit on the margin; bound ones on the correct side of it.
        tol = 1e-3
        interior = (alpha > 1e-9) & (alpha < c - 1e-9)
        assert np.abs(margin[interior]).max(initial=0.0) <= tol
        assert margin[alpha <= 1e-9].min(initial=0.0) >= -tol
        assert margin[alpha >= c - 1e-9].max(initial=0.0) <= tol


def test_smo_separable_toy_classifies_training_set():
    feats = blob_features(1)
    model = train_svm(feats, seed=0)
    scores_pos = score(model, feats.positives)
    scores_neg = score(model, feats.negatives)
    assert scores_pos.min() > scores_neg.max()
    assert model.auc == 1.0


# --------------------------------------------------------------------------
# AUC
# --------------------------------------------------------------------------


def oracle_auc(pos, neg):
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else (0.5 if p == n else 0.0)
    return total / (len(pos) * len(neg))


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(90)
    for _ in range(20):
        pos = rng.integers(0, 6, size=rng.integers(1, 10)).astype(float)
        neg = rng.integers(0, 6, size=rng.integers(1, 10)).astype(float)
        assert auc_score(pos, neg) == pytest.approx(oracle_auc(pos, neg), abs=1e-12)


def test_auc_edge_values():
    assert auc_score([2.0, 3.0], [0.0, 1.0]) == 1.0
    assert auc_score([0.0, 1.0], [2.0, 3.0]) == 0.0
    assert auc_score([1.0], [1.0]) == 0.5
    with pytest.raises(ValueError):
        auc_score([], [1.0])


# --------------------------------------------------------------------------
# Training protocol
# --------------------------------------------------------------------------


def test_train_reproducible_given_seed():
    feats = blob_features(2)
    m1 = train_svm(feats, seed=5)
    m2 = train_svm(feats, seed=5)
    assert m1.classifier.C == m2.classifier.C
    assert m1.classifier.gamma == m2.classifier.gamma
    assert m1.classifier.bias == m2.classifier.bias
    np.testing.assert_array_equal(m1.classifier.dual_coef, m2.classifier.dual_coef)
    np.testing.assert_array_equal(m1.cvs_plus, m2.cvs_plus)


def test_tied_grid_keeps_hard_threshold_usable():
    # Perfectly separable data ties every cell at AUC 1.  Ranking quality
    # cannot split the tie, so calibration must: the winner is the cell whose
    # positive holdout scores are highest, which keeps the stored hard
    # threshold (half their mean) below genuine-score territory.  The
    # degenerate smallest-(C, gamma) corner compresses all scores below zero
    # and would reject every genuine claim.
    feats = blob_features(3, gap=6.0)
    model = train_svm(feats, seed=0)
    assert model.auc == 1.0
    assert model.cvs_plus.mean() > 0.0
    threshold = hard_threshold(model)
    train_pos_scores = score(model, feats.positives)
    assert (train_pos_scores >= threshold).all()


def test_custom_grid_restricts_search():
    feats = blob_features(4)
    grid = (np.array([1.0]), np.array([0.5]))
    model = train_svm(feats, grid=grid, seed=0)
    assert model.classifier.C == 1.0
    assert model.classifier.gamma == 0.5


def test_dual_coefficients_inside_box():
    feats = blob_features(5, gap=0.7)  # overlapping: some alphas at the bound
    model = train_svm(feats, seed=1)
    alphas = np.abs(model.classifier.dual_coef)
    assert alphas.min() > 0.0  # only support vectors are kept
    assert alphas.max() <= model.classifier.C + 1e-12


def test_cvs_plus_are_positive_holdout_scores():
    feats = blob_features(6, n_pos=10)
    model = train_svm(feats, holdout_fraction=0.3, seed=2)
    assert 1 <= model.cvs_plus.size <= feats.positives.shape[0] - 1
    assert np.isfinite(model.cvs_plus).all()


def test_standardize_false_keeps_raw_space():
    feats = blob_features(7)
    model = train_svm(feats, seed=0, standardize=False)
    assert not model.classifier.standardize
    np.testing.assert_array_equal(model.classifier.mean, np.zeros(feats.dim))
    s = score(model, feats.positives[0])
    assert np.isfinite(s)


def test_feature_set_validation():
    rng = np.random.default_rng(91)
    pos = rng.normal(size=(4, 5))
    with pytest.raises(ValueError):
        LabeledFeatureSet(pos[:1], rng.normal(size=(2, 5)))  # P < 2
    with pytest.raises(ValueError):
        LabeledFeatureSet(pos, rng.normal(size=(7, 5)))  # N != 2P
    with pytest.raises(ValueError):
        LabeledFeatureSet(pos, rng.normal(size=(8, 4)))  # dim mismatch
    bad = rng.normal(size=(8, 5))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        LabeledFeatureSet(pos, bad)


def test_train_validation():
    feats = blob_features(8)
    with pytest.raises(ValueError):
        train_svm(feats, holdout_fraction=0.0)
    with pytest.raises(ValueError):
        train_svm(feats, grid=(np.array([]), np.array([1.0])))


# --------------------------------------------------------------------------
# Scoring and thresholds
# --------------------------------------------------------------------------


def test_score_batch_matches_single():
    feats = blob_features(9)
    model = train_svm(feats, seed=0)
    batch = score(model, feats.negatives)
    singles = [score(model, v) for v in feats.negatives]
    np.testing.assert_allclose(batch, singles, atol=1e-12)


def test_score_accepts_all_model_layers():
    feats = blob_features(10)
    vm = train_svm(feats, seed=0)
    rng = np.random.default_rng(0)
    wm = WriterModel("w1", Dictionary(random_dictionary_atoms(rng)), 1, vm)
    v = feats.positives[0]
    assert score(wm, v) == score(vm, v) == score(vm.classifier, v)
    assert hard_threshold(wm) == hard_threshold(vm) == vm.hard_threshold


def test_score_rejects_wrong_length():
    feats = blob_features(11)
    model = train_svm(feats, seed=0)
    with pytest.raises(ValueError):
        score(model, np.zeros(feats.dim + 1))


def test_hard_threshold_is_half_mean_of_positive_scores():
    feats = blob_features(12)
    base = train_svm(feats, seed=0)
    for cvs, expected in [([2.0, 4.0], 1.5), ([0.0], 0.0), ([1, 2, 3, 4, 5], 1.5)]:
        vm = VerifierModel(base.classifier, np.asarray(cvs, float), 1.0, 0)
        assert vm.hard_threshold == pytest.approx(expected, abs=1e-12)


def test_decision_is_kernel_expansion():
    # The decision function must equal the explicit dual expansion.
    feats = blob_features(13)
    model = train_svm(feats, seed=0).classifier
    x = feats.positives
    xs = model.transform(x)
    manual = _rbf(xs, model.support_vectors, model.gamma) @ model.dual_coef + model.bias
    np.testing.assert_allclose(model.decision(x), manual, atol=1e-12)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def test_writer_model_roundtrip(tmp_path):
    rng = np.random.default_rng(92)
    feats = blob_features(14)
    vm = train_svm(feats, seed=3)
    wm = WriterModel(
        "writer_007",
        Dictionary(random_dictionary_atoms(rng), meta={"thin_level": 2}),
        2,
        vm,
        config={"pooling": "f3", "beta": 2},
        seed=42,
    )
    path = tmp_path / "writer.sswm"
    save_writer_model(path, wm)
    back = load_writer_model(path)
    assert back.writer_id == "writer_007"
    assert back.motl == 2
    assert back.seed == 42
    assert back.config == {"pooling": "f3", "beta": 2}
    np.testing.assert_array_equal(back.dictionary.atoms, wm.dictionary.atoms)
    clf, clf0 = back.verifier.classifier, vm.classifier
    np.testing.assert_array_equal(clf.support_vectors, clf0.support_vectors)
    np.testing.assert_array_equal(clf.dual_coef, clf0.dual_coef)
    assert clf.bias == clf0.bias
    assert clf.gamma == clf0.gamma and clf.C == clf0.C
    np.testing.assert_array_equal(back.verifier.cvs_plus, vm.cvs_plus)
    assert back.verifier.auc == vm.auc
    # Same scores after the roundtrip.
    v = feats.negatives[0]
    assert score(back, v) == pytest.approx(score(wm, v), abs=1e-15)


def test_writer_model_rejects_corrupt(tmp_path):
    feats = blob_features(15)
    rng = np.random.default_rng(93)
    wm = WriterModel("w", Dictionary(random_dictionary_atoms(rng)), 1,
                     train_svm(feats, seed=0))
    path = tmp_path / "writer.sswm"
    save_writer_model(path, wm)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"????"
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        load_writer_model(path)


def test_support_vector_subset_only():
    # Refit keeps only vectors with non-zero multipliers (or all as fallback);
    # scoring must not depend on the discarded ones.
    feats = blob_features(16, n_pos=12, gap=3.0)
    model = train_svm(feats, seed=0)
    n_train = feats.positives.shape[0] + feats.negatives.shape[0]
    assert model.classifier.support_vectors.shape[0] <= n_train
    assert model.classifier.support_vectors.shape[1] == feats.dim
