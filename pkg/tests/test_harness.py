"""Noise injection, configuration, dataset layout, synthesis, and the
end-to-end protocol loop."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from sigsparse import (
    DatasetLayout,
    ExperimentConfig,
    NoiseSpec,
    add_noise,
    enroll_writer,
    image_descriptor,
    load_gray,
    median_filter,
    run_experiment,
    synth_generate,
)
from sigsparse.harness import (
    _path_noise_seed,
    _random_pool,
    _render_instance,
    _round_robin_negatives,
    _make_template,
)

CHEAP = dict(
    n_atoms=30,
    rho=2,
    ksvd_iters=2,
    cascade_iters=2,
    n_g_ref=3,
    repetitions=1,
)

# --------------------------------------------------------------------------
# Noise specs
# --------------------------------------------------------------------------


def test_noise_spec_parse_and_canonical_text():
    assert NoiseSpec.parse("none").kind == "none"
    sp = NoiseSpec.parse("salt-pepper:d=0.05")
    assert sp.kind == "salt-pepper" and sp.density == 0.05
    g = NoiseSpec.parse("gaussian:m=0.2,v=0.01")
    assert (g.kind, g.mean, g.var) == ("gaussian", 0.2, 0.01)
    for text in ("none", "salt-pepper:d=0.05", "gaussian:m=0.2,v=0.01"):
        assert str(NoiseSpec.parse(text)) == text
        assert str(NoiseSpec.parse(str(NoiseSpec.parse(text)))) == text


def test_noise_spec_rejects_malformed():
    for bad in (
        "speckle:d=0.1",
        "salt-pepper:d=1.5",
        "salt-pepper:d=-0.1",
        "gaussian:m=0.0,v=-1",
        "salt-pepper:x=0.1",
        "gaussian:m",
        "none:d=0.1",
    ):
        with pytest.raises(ValueError):
            NoiseSpec.parse(bad)
    # Omitted parameters fall back to their documented defaults.
    assert NoiseSpec.parse("salt-pepper").density == 0.01
    assert NoiseSpec.parse("gaussian:m=0.2").var == 0.01


def test_salt_pepper_zero_density_is_identity():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(30, 40), dtype=np.uint8)
    out = add_noise(img, "salt-pepper:d=0.0", seed=1)
    np.testing.assert_array_equal(out, img)
    assert out is not img  # still a fresh copy


def test_salt_pepper_flip_statistics():
    img = np.full((100, 100), 128, dtype=np.uint8)
    out = add_noise(img, "salt-pepper:d=0.1", seed=7)
    changed = out != img
    # Binomial(10^4, 0.1): mean 1000, sd 30; allow 3 sigma.
    assert 910 <= changed.sum() <= 1090
    assert set(np.unique(out[changed])) <= {0, 255}
    assert (out[~changed] == 128).all()
    # Roughly equiprobable salt vs pepper (3 sigma again).
    salt = (out[changed] == 255).sum()
    assert abs(salt - changed.sum() / 2) <= 3 * np.sqrt(changed.sum()) / 2


def test_salt_pepper_full_density_saturates():
    img = np.full((20, 20), 128, dtype=np.uint8)
    out = add_noise(img, "salt-pepper:d=1.0", seed=3)
    assert set(np.unique(out)) <= {0, 255}


def test_gaussian_zero_variance_is_pure_shift():
    img = np.full((10, 10), 100, dtype=np.uint8)
    out = add_noise(img, "gaussian:m=0.2,v=0.0", seed=0)
    np.testing.assert_array_equal(out, np.full((10, 10), 151, dtype=np.uint8))
    # Clipping at the top of the range.
    bright = np.full((10, 10), 250, dtype=np.uint8)
    np.testing.assert_array_equal(
        add_noise(bright, "gaussian:m=0.2,v=0.0", seed=0), np.full((10, 10), 255)
    )


def test_noise_deterministic_given_seed():
    img = np.full((25, 25), 90, dtype=np.uint8)
    a = add_noise(img, "salt-pepper:d=0.2", seed=11)
    b = add_noise(img, "salt-pepper:d=0.2", seed=11)
    c = add_noise(img, "salt-pepper:d=0.2", seed=12)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_add_noise_requires_uint8():
    with pytest.raises(ValueError):
        add_noise(np.zeros((5, 5)), "salt-pepper:d=0.1", seed=0)


# --------------------------------------------------------------------------
# Median filter
# --------------------------------------------------------------------------


def oracle_median(img, window):
    h, w = img.shape
    half = window // 2
    out = np.empty((h, w), dtype=np.uint8)
    for r in range(h):
        for c in range(w):
            block = img[
                max(r - half, 0) : min(r + half + 1, h),
                max(c - half, 0) : min(c + half + 1, w),
            ]
            out[r, c] = np.uint8(np.rint(np.median(block)))
    return out


@pytest.mark.parametrize("window", [3, 5])
def test_median_matches_brute_force(window):
    rng = np.random.default_rng(220)
    for _ in range(5):
        img = rng.integers(0, 256, size=(14, 17), dtype=np.uint8)
        np.testing.assert_array_equal(
            median_filter(img, window), oracle_median(img, window)
        )


def test_median_constant_image_unchanged():
    img = np.full((12, 12), 77, dtype=np.uint8)
    np.testing.assert_array_equal(median_filter(img), img)


def test_median_removes_isolated_salt_pixel():
    img = np.full((9, 9), 40, dtype=np.uint8)
    img[4, 4] = 255
    out = median_filter(img, 3)
    assert out[4, 4] == 40
    np.testing.assert_array_equal(out, np.full((9, 9), 40, dtype=np.uint8))


def test_median_validation():
    img = np.zeros((5, 5), dtype=np.uint8)
    with pytest.raises(ValueError):
        median_filter(img, 4)
    with pytest.raises(ValueError):
        median_filter(img.astype(np.int16), 3)
    np.testing.assert_array_equal(median_filter(img, 1), img)


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


def test_config_text_roundtrip_and_hash():
    cfg = ExperimentConfig(seed=9, pooling="f4", beta=3, noise="salt-pepper:d=0.01")
    text = cfg.to_text()
    back = ExperimentConfig.from_text(text)
    assert back == cfg
    assert back.hash12 == cfg.hash12
    assert len(cfg.hash12) == 12
    # Text is sorted key=value lines covering every field.
    lines = [l for l in text.splitlines() if l]
    assert lines == sorted(lines)
    assert len(lines) == len(cfg.as_dict())


def test_config_overrides():
    cfg = ExperimentConfig()
    out = cfg.with_overrides(["pooling=f5", "beta=3", "use_keypoints=false", "lam=0.2"])
    assert (out.pooling, out.beta, out.use_keypoints, out.lam) == ("f5", 3, False, 0.2)
    assert cfg.pooling == "f3"  # original untouched
    assert out.hash12 != cfg.hash12
    with pytest.raises(ValueError):
        cfg.with_overrides(["bogus_key=1"])
    with pytest.raises(ValueError):
        cfg.with_overrides(["beta=three"])


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(n_atoms=25)  # not overcomplete for 5x5 patches
    with pytest.raises(ValueError):
        ExperimentConfig(patch_size=4)
    with pytest.raises(ValueError):
        ExperimentConfig(prior="d-nonneg")  # needs solver=lars
    with pytest.raises(ValueError):
        ExperimentConfig(solver="ista")
    with pytest.raises(ValueError):
        ExperimentConfig(noise="salt-pepper:d=2")
    with pytest.raises(ValueError):
        ExperimentConfig(n_g_ref=1)
    ExperimentConfig(prior="d-nonneg", solver="lars")  # valid combination


def test_config_median_auto_follows_noise():
    assert not ExperimentConfig().median_on
    assert ExperimentConfig(noise="salt-pepper:d=0.01").median_on
    assert ExperimentConfig(noise="gaussian:m=0.0,v=0.001").median_on
    assert not ExperimentConfig(noise="salt-pepper:d=0.01",
                                median_prefilter="off").median_on
    assert ExperimentConfig(median_prefilter="on").median_on


def test_config_centering_off_for_nonneg_dictionaries():
    assert ExperimentConfig().center_patches
    assert not ExperimentConfig(prior="nmf", solver="lars").center_patches
    assert not ExperimentConfig(prior="d-nonneg", solver="lars").center_patches
    assert ExperimentConfig(prior="a-positive").center_patches


def test_config_grid_spans_exponent_range():
    c_values, g_values = ExperimentConfig().grid
    np.testing.assert_allclose(c_values, 2.0 ** np.arange(-3, 8))
    np.testing.assert_allclose(g_values, 2.0 ** np.arange(-9, 4))


# --------------------------------------------------------------------------
# Dataset layout
# --------------------------------------------------------------------------


def test_scan_per_writer_directories(synth_dataset):
    layout = DatasetLayout.scan(synth_dataset.root)
    assert layout.writer_ids == [f"writer_{i:02d}" for i in range(1, 5)]
    for wid in layout.writer_ids:
        files = layout.writers[wid]
        assert len(files.genuine) == 7
        assert len(files.forgery) == 4
        assert all(p.name.startswith("genuine") for p in files.genuine)


def test_scan_flat_pool_layout(tmp_path):
    org = tmp_path / "full_org"
    forg = tmp_path / "full_forg"
    org.mkdir()
    forg.mkdir()
    tiny = np.full((20, 20), 255, dtype=np.uint8)
    tiny[8:12, 4:16] = 0
    from sigsparse import save_gray

    for w in (1, 2):
        for i in (1, 2, 3):
            save_gray(org / f"original_{w}_{i}.pgm", tiny)
            save_gray(forg / f"forgeries_{w}_{i}.pgm", tiny)
    (org / "notes.txt").write_text("ignored")
    layout = DatasetLayout.scan(tmp_path)
    assert layout.writer_ids == ["writer_001", "writer_002"]
    files = layout.writers["writer_001"]
    assert [p.name for p in files.genuine] == [f"original_1_{i}.pgm" for i in (1, 2, 3)]
    assert len(files.forgery) == 3


def test_scan_rejects_unrecognized(tmp_path):
    (tmp_path / "stuff").mkdir()
    with pytest.raises(ValueError):
        DatasetLayout.scan(tmp_path)
    with pytest.raises(ValueError):
        DatasetLayout.scan(tmp_path / "missing")


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------


def test_synth_byte_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    synth_generate(a, n_writers=2, n_genuine=2, n_forgery=2, seed=5)
    synth_generate(b, n_writers=2, n_genuine=2, n_forgery=2, seed=5)
    files_a = sorted(p.relative_to(a) for p in a.rglob("*.pgm"))
    files_b = sorted(p.relative_to(b) for p in b.rglob("*.pgm"))
    assert files_a == files_b and len(files_a) == 8
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
    c = tmp_path / "c"
    synth_generate(c, n_writers=2, n_genuine=2, n_forgery=2, seed=6)
    assert any(
        (a / rel).read_bytes() != (c / rel).read_bytes() for rel in files_a
    )


def test_synth_strokes_have_thin_optimal_level(synth_dataset):
    # Default stroke widths give signatures whose steepest density drop
    # comes after a single thinning pass.
    from sigsparse import optimal_thinning_level, otsu_threshold

    layout = synth_dataset
    levels = []
    for wid in layout.writer_ids:
        for p in layout.writers[wid].genuine[:3]:
            mask = otsu_threshold(load_gray(p))
            levels.append(optimal_thinning_level(mask, 5)[0])
    assert np.median(levels) == 1


def test_synth_distortion_zero_matches_genuine_rendering():
    rng = np.random.default_rng(3)
    template = _make_template(rng, 160, 240, None)
    base = _render_instance(template, np.random.default_rng(42), 160, 240, 1.5, 0.0)
    same = _render_instance(template, np.random.default_rng(42), 160, 240, 1.5, 0.0)
    far = _render_instance(template, np.random.default_rng(42), 160, 240, 1.5, 6.0)
    np.testing.assert_array_equal(base, same)
    assert not np.array_equal(base, far)


def test_synth_validation(tmp_path):
    with pytest.raises(ValueError):
        synth_generate(tmp_path / "x", n_writers=0)
    with pytest.raises(ValueError):
        synth_generate(tmp_path / "y", height=10, width=10)


# --------------------------------------------------------------------------
# Protocol pieces
# --------------------------------------------------------------------------


def test_path_noise_seed_uses_last_two_components():
    a = _path_noise_seed(3, Path("/data/run1/writer_01/genuine_01.pgm"))
    b = _path_noise_seed(3, Path("/other/prefix/writer_01/genuine_01.pgm"))
    c = _path_noise_seed(3, Path("/data/run1/writer_01/genuine_02.pgm"))
    d = _path_noise_seed(4, Path("/data/run1/writer_01/genuine_01.pgm"))
    assert a.entropy == b.entropy
    assert a.entropy != c.entropy
    assert a.entropy != d.entropy


def test_round_robin_negatives_spreads_across_writers(synth_dataset):
    layout = synth_dataset
    rng = np.random.default_rng(0)
    picked = _round_robin_negatives(layout, "writer_01", 10, rng)
    assert len(picked) == 10
    assert len(set(picked)) == 10  # no duplicates while supplies last
    owners = [p.parent.name for p in picked]
    assert "writer_01" not in owners
    counts = {w: owners.count(w) for w in set(owners)}
    assert max(counts.values()) - min(counts.values()) <= 1
    assert all(p.name.startswith("genuine") for p in picked)


def test_round_robin_exhaustion_errors(synth_dataset):
    layout = synth_dataset
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        _round_robin_negatives(layout, "writer_01", 100, rng)


def test_random_pool_prefers_unspent_files(synth_dataset):
    layout = synth_dataset
    others = [w for w in layout.writer_ids if w != "writer_01"]
    # Mark every genuine of the first other writer as spent except one.
    first = layout.writers[others[0]].genuine
    used = {str(p) for p in first[1:]}
    picked = _random_pool(layout, "writer_01", used, 1, np.random.default_rng(1))
    assert len(picked) == len(others)
    by_writer = {p.parent.name: p for p in picked}
    assert set(by_writer) == set(others)
    assert by_writer[others[0]] == first[0]  # the only fresh file wins


def test_enroll_writer_counts_and_model(synth_dataset):
    layout = synth_dataset
    cfg = ExperimentConfig(**CHEAP)
    files = layout.writers["writer_02"]
    refs = list(files.genuine[:3])
    negatives = _round_robin_negatives(
        layout, "writer_02", 6, np.random.default_rng(0)
    )
    model = enroll_writer("writer_02", refs, negatives, cfg)
    assert model.writer_id == "writer_02"
    assert model.dictionary.atoms.shape == (25, 30)
    assert model.motl >= 0
    assert model.config["pooling"] == "f3"
    desc = image_descriptor(load_gray(refs[0]), model.dictionary, model.motl, cfg)
    assert len(desc) == (cfg.beta**2 + 2) * cfg.n_atoms
    assert np.isfinite(model.verifier.classifier.decision(desc.values[None, :])).all()


def test_enroll_writer_validation(synth_dataset):
    layout = synth_dataset
    cfg = ExperimentConfig(**CHEAP)
    files = layout.writers["writer_01"]
    with pytest.raises(ValueError):
        enroll_writer("w", [files.genuine[0]], [], cfg)  # one reference
    with pytest.raises(ValueError):
        enroll_writer("w", list(files.genuine[:3]), list(files.genuine[:5]), cfg)


# --------------------------------------------------------------------------
# Full runs
# --------------------------------------------------------------------------


def test_run_experiment_deterministic(synth_dataset, tmp_path):
    cfg = ExperimentConfig(seed=13, **CHEAP)
    report1, run_dir = run_experiment(synth_dataset.root, cfg, out_root=tmp_path)
    report2, _ = run_experiment(synth_dataset.root, cfg)
    rows1 = [r.as_row() for r in report1.rows]
    rows2 = [r.as_row() for r in report2.rows]
    assert rows1 == rows2
    assert len(rows1) == 4  # every writer evaluated once
    assert report1.aggregate == report2.aggregate
    assert not report1.skipped

    # The stamped run directory carries the config and both reports.
    assert run_dir is not None and run_dir.is_dir()
    assert run_dir.name == f"run_{cfg.hash12}_s13"
    stored = ExperimentConfig.from_text((run_dir / "config.txt").read_text())
    assert stored == cfg
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["config_hash"] == cfg.hash12
    assert summary["aggregate"]["eer_skilled"] == pytest.approx(
        report1.aggregate["eer_skilled"]
    )
    assert (run_dir / "per_writer.csv").exists()


def test_run_experiment_seed_changes_results(synth_dataset):
    r1, _ = run_experiment(synth_dataset.root, ExperimentConfig(seed=1, **CHEAP))
    r2, _ = run_experiment(synth_dataset.root, ExperimentConfig(seed=2, **CHEAP))
    t1 = [r.threshold_eer_skilled for r in r1.rows]
    t2 = [r.threshold_eer_skilled for r in r2.rows]
    assert t1 != t2


def test_run_experiment_skips_underpopulated_writer(tmp_path):
    data = tmp_path / "data"
    synth_generate(data, n_writers=3, n_genuine=7, n_forgery=3, seed=2)
    for p in sorted((data / "writer_03").glob("genuine_*.pgm"))[2:]:
        p.unlink()  # leaves 2 genuine: below n_g_ref + 1

    cfg = ExperimentConfig(**CHEAP)
    report, _ = run_experiment(data, cfg)
    assert len(report.rows) == 2
    assert {r.writer_id for r in report.rows} == {"writer_01", "writer_02"}
    assert len(report.skipped) == 1
    skip = report.skipped[0]
    assert skip["writer"] == "writer_03" and skip["repetition"] == 0
    assert "genuine" in skip["reason"]


def test_run_experiment_negative_count_protocol(synth_dataset):
    # 2 x n_g_ref negatives per writer: visible through the stored model
    # constraint that enroll enforces, and through a run completing with
    # n_g_ref just below the per-writer genuine count.
    cfg = ExperimentConfig(n_atoms=30, rho=2, ksvd_iters=2, cascade_iters=2,
                           n_g_ref=6, repetitions=1)
    report, _ = run_experiment(synth_dataset.root, cfg)
    assert len(report.rows) == 4  # 7 genuine: 6 refs + 1 evaluation sample


def test_run_experiment_rejects_unusable_dataset(tmp_path):
    data = tmp_path / "data"
    synth_generate(data, n_writers=2, n_genuine=3, n_forgery=2, seed=0)
    cfg = ExperimentConfig(n_atoms=30, rho=2, ksvd_iters=2, cascade_iters=2,
                           n_g_ref=5, repetitions=1)  # nobody has 6 genuine
    with pytest.raises(ValueError):
        run_experiment(data, cfg)
