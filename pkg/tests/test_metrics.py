"""Error-rate computation against brute-force counting and its invariants."""

from __future__ import annotations

import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigsparse import (
    MetricsReport,
    ScoreSet,
    WriterMetrics,
    aggregate_metrics,
    compute_writer_metrics,
    eer,
    far_at,
    far_frr_curve,
    frr_at,
    p_far_r_at_eer_s,
)

# --------------------------------------------------------------------------
# Brute-force counting oracle
# --------------------------------------------------------------------------


def oracle_far(forgery, t):
    return 100.0 * sum(1 for s in forgery if s >= t) / len(forgery)


def oracle_frr(genuine, t):
    return 100.0 * sum(1 for s in genuine if s < t) / len(genuine)


def oracle_eer(genuine, forgery):
    """EER by scanning a dense threshold ladder and interpolating the
    first sign change of FAR - FRR by hand."""
    pool = np.unique(np.concatenate([genuine, forgery]))
    span = pool[-1] - pool[0]
    eps = 1e-6 * span if span > 0 else 1e-6
    ladder = np.concatenate([[pool[0] - eps], pool, [pool[-1] + eps]])
    prev_t = prev_d = prev_far = None
    for t in ladder:
        far = oracle_far(forgery, t)
        frr = oracle_frr(genuine, t)
        d = far - frr
        if d <= 0.0:
            if d == 0.0 or prev_d is None:
                return far, t
            frac = prev_d / (prev_d - d)
            return (
                prev_far + frac * (far - prev_far),
                prev_t + frac * (t - prev_t),
            )
        prev_t, prev_d, prev_far = t, d, far
    raise AssertionError("no crossing found")


def random_scores(rng, n_max=15, grid=True):
    ng = int(rng.integers(1, n_max))
    nf = int(rng.integers(1, n_max))
    if grid:  # coarse grid makes ties and exact crossings common
        g = rng.integers(0, 8, size=ng).astype(float)
        f = rng.integers(0, 8, size=nf).astype(float)
    else:
        g = rng.normal(loc=1.0, size=ng)
        f = rng.normal(loc=-1.0, size=nf)
    return g, f


def test_rates_match_brute_force_counting():
    rng = np.random.default_rng(200)
    for trial in range(200):
        g, f = random_scores(rng, grid=trial % 2 == 0)
        thresholds, far, frr = far_frr_curve(g, f)
        for t, a, r in zip(thresholds, far, frr):
            assert a == pytest.approx(oracle_far(f, t), abs=1e-12)
            assert r == pytest.approx(oracle_frr(g, t), abs=1e-12)
        assert far_at(f, 0.5) == pytest.approx(oracle_far(f, 0.5), abs=1e-12)
        assert frr_at(g, 0.5) == pytest.approx(oracle_frr(g, 0.5), abs=1e-12)


def test_eer_matches_scan_oracle():
    rng = np.random.default_rng(201)
    for trial in range(200):
        g, f = random_scores(rng, grid=trial % 2 == 0)
        rate, thr = eer(g, f)
        rate0, thr0 = oracle_eer(g, f)
        assert rate == pytest.approx(rate0, abs=1e-9)
        assert thr == pytest.approx(thr0, abs=1e-9)


def test_curve_endpoints_and_monotonicity():
    rng = np.random.default_rng(202)
    for _ in range(20):
        g, f = random_scores(rng)
        thresholds, far, frr = far_frr_curve(g, f)
        assert far[0] == 100.0 and frr[0] == 0.0  # below every score
        assert far[-1] == 0.0 and frr[-1] == 100.0  # above every score
        assert (np.diff(far) <= 1e-12).all()  # FAR falls
        assert (np.diff(frr) >= -1e-12).all()  # FRR rises
        assert (np.diff(thresholds) > 0).all()


def test_eer_zero_for_disjoint_sets():
    rate, thr = eer([5.0, 6.0, 7.0], [1.0, 2.0, 3.0])
    assert rate == 0.0
    assert 3.0 < thr <= 5.0


def test_eer_fifty_for_identical_multisets():
    scores = [1.0, 2.0, 3.0, 4.0]
    rate, _ = eer(scores, scores)
    assert rate == pytest.approx(50.0, abs=1e-9)


def test_eer_single_scores():
    rate, _ = eer([1.0], [0.0])
    assert rate == 0.0
    rate, _ = eer([0.0], [1.0])  # reversed classes: total confusion
    assert rate == pytest.approx(100.0, abs=1e-9)
    rate, _ = eer([1.0], [1.0])
    assert rate == pytest.approx(50.0, abs=1e-9)


@settings(max_examples=80, deadline=None)
@given(
    st.integers(0, 10_000),
    st.sampled_from(["affine", "exp", "cube"]),
)
def test_eer_invariant_under_increasing_transforms(seed, kind):
    rng = np.random.default_rng(seed)
    g, f = random_scores(rng, grid=seed % 2 == 0)
    transform = {
        "affine": lambda s: 2.5 * s + 7.0,
        "exp": lambda s: np.exp(0.5 * s),
        "cube": lambda s: s**3 + s,
    }[kind]
    base, _ = eer(g, f)
    mapped, _ = eer(transform(np.asarray(g)), transform(np.asarray(f)))
    assert mapped == pytest.approx(base, abs=1e-7)


# --------------------------------------------------------------------------
# Writer metrics and aggregation
# --------------------------------------------------------------------------


def test_writer_metrics_fields_consistent():
    rng = np.random.default_rng(203)
    scores = ScoreSet(
        genuine=rng.normal(1.0, 0.4, 12),
        skilled=rng.normal(-0.2, 0.4, 12),
        random=rng.normal(-1.0, 0.4, 12),
    )
    wm = compute_writer_metrics("w1", scores, repetition=3, hard_threshold=0.25)
    t = wm.threshold_eer_skilled
    assert wm.far_skilled_eer_t == pytest.approx(oracle_far(scores.skilled, t))
    assert wm.frr_eer_t == pytest.approx(oracle_frr(scores.genuine, t))
    assert wm.far_random_at_eer_skilled == pytest.approx(oracle_far(scores.random, t))
    assert wm.far_random_at_eer_skilled == pytest.approx(p_far_r_at_eer_s(scores))
    assert wm.far_skilled_hard == pytest.approx(oracle_far(scores.skilled, 0.25))
    assert wm.frr_hard == pytest.approx(oracle_frr(scores.genuine, 0.25))
    assert wm.far_random_hard == pytest.approx(oracle_far(scores.random, 0.25))
    assert wm.repetition == 3
    row = wm.as_row()
    assert row["writer"] == "w1" and row["hard_threshold"] == 0.25


def test_writer_metrics_without_random_or_hard():
    scores = ScoreSet(genuine=[1.0, 2.0], skilled=[0.0, 0.5])
    wm = compute_writer_metrics("w", scores)
    assert wm.eer_random is None
    assert wm.far_random_at_eer_skilled is None
    assert wm.hard_threshold is None and wm.frr_hard is None
    with pytest.raises(ValueError):
        p_far_r_at_eer_s(scores)


def test_score_set_validation():
    with pytest.raises(ValueError):
        ScoreSet(genuine=[], skilled=[1.0])
    with pytest.raises(ValueError):
        ScoreSet(genuine=[1.0], skilled=[])
    with pytest.raises(ValueError):
        ScoreSet(genuine=[np.nan], skilled=[1.0])
    s = ScoreSet(genuine=[1.0], skilled=[0.0])
    with pytest.raises(ValueError):
        s.forgery("bogus")


def make_row(writer, rep, eer_s, eer_r=None):
    return WriterMetrics(
        writer_id=writer,
        repetition=rep,
        eer_skilled=eer_s,
        threshold_eer_skilled=0.0,
        far_skilled_eer_t=eer_s,
        frr_eer_t=eer_s,
        eer_random=eer_r,
        far_random_at_eer_skilled=None,
    )


def test_aggregate_simple_mean():
    agg = aggregate_metrics([make_row("a", 0, 2.0), make_row("b", 0, 4.0)])
    assert agg["eer_skilled"] == pytest.approx(3.0)
    assert agg["n_writers"] == 2
    assert agg["n_repetitions"] == 1
    assert agg["eer_random"] is None


def test_aggregate_is_mean_of_per_repetition_means():
    rows = [
        make_row("a", 0, 0.0), make_row("b", 0, 10.0),   # rep 0 mean: 5
        make_row("a", 1, 20.0),                          # rep 1 mean: 20
    ]
    agg = aggregate_metrics(rows)
    # Unweighted over repetitions: (5 + 20) / 2, not the grand mean 10.
    assert agg["eer_skilled"] == pytest.approx(12.5)
    assert agg["n_rows"] == 3


def test_aggregate_skips_missing_values():
    rows = [make_row("a", 0, 2.0, eer_r=1.0), make_row("b", 0, 4.0, eer_r=None)]
    agg = aggregate_metrics(rows)
    assert agg["eer_random"] == pytest.approx(1.0)


def test_aggregate_empty_errors():
    with pytest.raises(ValueError):
        aggregate_metrics([])


# --------------------------------------------------------------------------
# Report files
# --------------------------------------------------------------------------


def test_report_csv_and_summary(tmp_path):
    rows = [make_row("a", 0, 2.0), make_row("b", 0, 4.0), make_row("a", 1, 6.0)]
    report = MetricsReport.from_rows(
        rows, skipped=[{"writer": "c", "repetition": 0, "reason": "too few images"}]
    )
    csv_path = tmp_path / "per_writer.csv"
    report.write_csv(csv_path)
    with open(csv_path, newline="") as fh:
        parsed = list(csv.DictReader(fh))
    assert len(parsed) == 3
    assert parsed[0]["writer"] == "a"
    assert float(parsed[1]["eer_skilled"]) == 4.0
    assert parsed[0]["eer_random"] == ""  # absent metrics stay blank

    summary_path = tmp_path / "summary.json"
    report.write_summary(summary_path, extra={"config_hash": "abc123"})
    payload = json.loads(summary_path.read_text())
    assert payload["aggregate"]["eer_skilled"] == pytest.approx(4.5)  # (3+6)/2
    assert payload["config_hash"] == "abc123"
    assert payload["skipped"] == [
        {"writer": "c", "repetition": 0, "reason": "too few images"}
    ]
    assert payload["aggregate"]["n_rows"] == 3
