"""
The full verification protocol, end to end
==========================================

One model per writer: learn that writer's dictionary from reference
signatures, describe references plus other writers' genuines, train an RBF
SVM on them, and score unseen genuine, skilled-forgery, and random-forgery
claims.  The experiment runner repeats this over every writer and random
split, then reports equal-error rates.
"""

from sigsparse import (
    ExperimentConfig,
    load_gray,
    enroll_writer,
    image_descriptor,
    run_experiment,
    score,
    synth_generate,
)

# --------------------------------------------------------------------------
# A self-contained dataset: 4 synthetic writers, 7 genuines + 4 skilled
# forgeries each.  A trimmed config keeps the demo quick; defaults trade
# speed back for accuracy.
# --------------------------------------------------------------------------

layout = synth_generate("demo-data", n_writers=4, n_genuine=7, n_forgery=4, seed=4)
cfg = ExperimentConfig(
    seed=5,
    n_atoms=40,
    ksvd_iters=8,
    cascade_iters=3,
    n_g_ref=4,
    repetitions=2,
)
print(f"config hash {cfg.hash12}  (any field change changes the hash)")

# --------------------------------------------------------------------------
# Enroll one writer by hand to see the pieces: the model carries the
# dictionary, the SVM, and the hard decision threshold.
# --------------------------------------------------------------------------

target = layout.writer_ids[0]
refs = layout.writers[target].genuine[: cfg.n_g_ref]
others = [w for w in layout.writer_ids if w != target]
negatives = []
for i in range(2 * cfg.n_g_ref):
    donor = others[i % len(others)]
    negatives.append(layout.writers[donor].genuine[i // len(others)])

model = enroll_writer(target, refs, negatives, cfg)
print(f"\nenrolled {target}: dictionary {model.dictionary.atoms.shape}, "
      f"{len(model.verifier.classifier.dual_coef)} support vectors, "
      f"hard threshold {model.hard_threshold:.3f}")

claim_true = layout.writers[target].genuine[-1]
claim_forged = layout.writers[target].forgery[0]
for label, path in [("genuine claim", claim_true), ("skilled forgery", claim_forged)]:
    desc = image_descriptor(load_gray(path), model.dictionary, model.motl, cfg)
    s = score(model, desc.values)
    verdict = "accept" if s >= model.hard_threshold else "reject"
    print(f"  {label}: score {s:+.3f} -> {verdict}")

# --------------------------------------------------------------------------
# The batch experiment: every writer, every repetition, fresh random splits,
# one metrics row each; the aggregate averages writers within repetitions
# first.  A run directory stamps config, per-writer rows, and the summary.
# --------------------------------------------------------------------------

report, run_dir = run_experiment("demo-data", cfg, out_root="demo-runs")
print(f"\nper-writer rows ({len(report.rows)}):")
for row in report.rows:
    print(f"  rep {row.repetition}  {row.writer_id}: "
          f"EER-skilled {row.eer_skilled:5.2f}%  "
          f"EER-random {row.eer_random:5.2f}%")
agg = report.aggregate
print(f"\naggregate: EER-skilled {agg['eer_skilled']:.2f}%  "
      f"EER-random {agg['eer_random']:.2f}%")
print(f"artifacts written to {run_dir}/ "
      f"(config.txt, per_writer.csv, summary.json)")
