"""Batch command-line interface.

Subcommands: preprocess, learn-dict, encode, features, keypoints, enroll,
verify, synth, experiment, report.  Single-image commands work on 8-bit
grayscale PGM or PNG files; experiment-level commands consume a dataset
directory and a flat key=value config file (every key optional, overridable
with ``--set key=value``).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .descriptor import save_descriptor_bin, save_descriptor_json
from .dictlearn import ksvd_fit, ksvd_update, online_fit
from .harness import (
    ExperimentConfig,
    enroll_writer,
    image_descriptor,
    median_filter,
    run_experiment,
    synth_generate,
)
from .imageproc import optimal_thinning_level, otsu_threshold, thin_to_level
from .imgio import load_gray, mask_to_gray, save_gray
from .keypoints import assign_to_skeleton, detect_keypoints
from .sparse import (
    lars_lasso_encode,
    load_dictionary,
    omp_encode,
    reconstruction_error,
    save_dictionary,
)
from .verifier import load_writer_model, save_writer_model, score

__all__ = ["main"]


def _config_from_args(args) -> ExperimentConfig:
    cfg = (
        ExperimentConfig.from_text(Path(args.config).read_text())
        if getattr(args, "config", None)
        else ExperimentConfig()
    )
    overrides = getattr(args, "set", None) or []
    return cfg.with_overrides(overrides)


def _emit(payload: dict, path: str | None = None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


# --------------------------------------------------------------------------
# Single-image commands
# --------------------------------------------------------------------------


def _cmd_preprocess(args) -> int:
    img = load_gray(args.image)
    mask = otsu_threshold(img)
    otl, curve = optimal_thinning_level(mask, args.patch_size)
    level = args.level if args.level is not None else otl
    skel = thin_to_level(mask, level)
    save_gray(args.out_skeleton, mask_to_gray(skel.mask))
    sidecar = args.out_json or str(args.out_skeleton) + ".json"
    _emit(
        {
            "otl": otl,
            "pd_curve": [float(v) for v in curve.pd],
            "level_used": level,
            "ink_count": skel.ink_count,
        },
        sidecar,
    )
    print(f"skeleton (level {level}) -> {args.out_skeleton}; otl={otl}")
    return 0


def _level_for(img: np.ndarray, args) -> int:
    if args.level is not None:
        return args.level
    return optimal_thinning_level(otsu_threshold(img), args.patch_size)[0]


def _patches_at(img, level: int, args):
    from .patches import extract_patches

    skel = thin_to_level(otsu_threshold(img), level)
    return skel, extract_patches(img, skel, args.patch_size, center=not args.no_center)


def _cmd_learn_dict(args) -> int:
    images = [load_gray(p) for p in args.images]
    levels = sorted(
        optimal_thinning_level(otsu_threshold(im), args.patch_size)[0] for im in images
    )
    level = levels[(len(levels) - 1) // 2]  # lower median across the inputs
    mats = []
    for img in images:
        _, pm = _patches_at(img, level, args)
        mats.append(pm.data / 255.0)
    if args.method == "ksvd":
        dictionary = ksvd_fit(
            mats[0], args.atoms, args.rho, iters=args.iters, seed=args.seed
        )
        for mat in mats[1:]:
            dictionary = ksvd_update(dictionary, mat, args.rho, iters=args.update_iters)
    else:
        dictionary = online_fit(
            mats,
            args.atoms,
            args.lam,
            minibatch=args.minibatch,
            time_budget=float("inf"),
            max_batches=args.batches,
            prior=None if args.prior == "none" else args.prior,
            seed=args.seed,
        )
    dictionary.meta["thin_level"] = level
    save_dictionary(args.out, dictionary)
    print(
        f"dictionary {dictionary.n}x{dictionary.K} ({args.method}, level {level}) "
        f"-> {args.out}"
    )
    return 0


def _cmd_encode(args) -> int:
    dictionary = load_dictionary(args.dict)
    img = load_gray(args.image)
    level = _level_for(img, args)
    _, pm = _patches_at(img, level, args)
    data = pm.data / 255.0
    if args.solver == "omp":
        codes = omp_encode(dictionary, data, args.rho, positive=args.positive)
    else:
        codes = lars_lasso_encode(dictionary, data, args.lam, positive=args.positive)
    with open(args.out, "wb") as fh:  # exact path; np.save would append .npy
        np.save(fh, codes.codes)
    _emit(
        {
            "atoms": int(codes.K),
            "signals": int(codes.M),
            "solver": codes.solver_tag,
            "level": level,
            "mean_nonzeros": float(codes.nonzeros_per_column.mean()),
            "residual": reconstruction_error(dictionary, data, codes),
        }
    )
    return 0


def _cmd_features(args) -> int:
    dictionary = load_dictionary(args.dict)
    img = load_gray(args.image)
    level = _level_for(img, args)
    cfg = ExperimentConfig(
        patch_size=args.patch_size,
        n_atoms=dictionary.K,
        solver=args.solver,
        rho=args.rho,
        lam=args.lam,
        pooling=args.pooling,
        beta=args.beta,
        use_keypoints=not args.no_keypoints,
        kp_threshold=args.kp_threshold,
        max_keypoints=args.max_points,
    )
    desc = image_descriptor(img, dictionary, level, cfg)
    out = Path(args.out)
    if out.suffix.lower() == ".json":
        save_descriptor_json(out, desc)
    else:
        save_descriptor_bin(out, desc)
    print(f"descriptor ({desc.pooling_tag}, beta={desc.beta}, len={len(desc)}) -> {out}")
    return 0


def _cmd_keypoints(args) -> int:
    img = load_gray(args.image)
    kps = detect_keypoints(
        img,
        threshold=args.threshold,
        octaves=args.octaves,
        arc=args.arc,
        max_points=args.max_points,
    )
    payload = {
        "count": len(kps),
        "points": [
            {
                "row": int(r),
                "col": int(c),
                "score": float(s),
                "octave": int(o),
            }
            for r, c, s, o in zip(kps.rows, kps.cols, kps.scores, kps.octaves)
        ],
    }
    if args.assign:
        level = _level_for(img, args)
        skel = thin_to_level(otsu_threshold(img), level)
        assigned = assign_to_skeleton(kps, skel)
        payload["level"] = level
        for entry, ar, ac in zip(
            payload["points"], assigned.assigned_rows, assigned.assigned_cols
        ):
            entry["assigned_row"] = int(ar)
            entry["assigned_col"] = int(ac)
    _emit(payload, args.dump_json)
    return 0


# --------------------------------------------------------------------------
# Writer-model commands
# --------------------------------------------------------------------------


def _cmd_enroll(args) -> int:
    cfg = _config_from_args(args)
    model = enroll_writer(
        args.writer_id,
        [Path(p) for p in args.refs],
        [Path(p) for p in args.negatives],
        cfg,
    )
    save_writer_model(args.out, model)
    print(
        f"writer {model.writer_id}: motl={model.motl} "
        f"C={model.verifier.classifier.C:g} gamma={model.verifier.classifier.gamma:g} "
        f"auc={model.verifier.auc:.3f} hard_threshold={model.hard_threshold:.4f} "
        f"-> {args.out}"
    )
    return 0


def _cmd_verify(args) -> int:
    model = load_writer_model(args.model)
    cfg = model.experiment_config()
    img = load_gray(args.image)
    if cfg.median_on:
        img = median_filter(img)
    desc = image_descriptor(img, model.dictionary, model.motl, cfg)
    value = score(model, desc)
    payload = {
        "writer": model.writer_id,
        "score": value,
        "hard_threshold": model.hard_threshold,
        "decision_hard": bool(value >= model.hard_threshold),
    }
    if args.threshold is not None:
        payload["threshold"] = args.threshold
        payload["decision_at_threshold"] = bool(value >= args.threshold)
    _emit(payload)
    return 0


# --------------------------------------------------------------------------
# Experiment commands
# --------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    layout = synth_generate(
        args.out,
        n_writers=args.writers,
        n_genuine=args.genuine,
        n_forgery=args.forgery,
        seed=args.seed,
        height=args.height,
        width=args.width,
        stroke_width=args.stroke_width,
        jitter=args.jitter,
        forgery_distortion=args.distortion,
    )
    total = sum(
        len(w.genuine) + len(w.forgery) for w in layout.writers.values()
    )
    print(f"{len(layout.writer_ids)} writers, {total} images -> {layout.root}")
    return 0


def _cmd_experiment(args) -> int:
    cfg = _config_from_args(args)
    log = None if args.quiet else print
    report, run_dir = run_experiment(args.data, cfg, out_root=args.out, log=log)
    _emit({"aggregate": report.aggregate, "run_dir": str(run_dir)})
    return 0


def _cmd_report(args) -> int:
    run_dir = Path(args.run)
    summary = run_dir / "summary.json"
    if not summary.is_file():
        raise ValueError(f"{run_dir} holds no summary.json")
    payload = json.loads(summary.read_text())
    agg = payload.get("aggregate", {})
    print(f"run directory : {run_dir}")
    print(f"config hash   : {payload.get('config_hash', '?')}")
    print(f"seed          : {payload.get('seed', '?')}")
    print(f"rows          : {agg.get('n_rows', '?')} "
          f"(writers={agg.get('n_writers', '?')}, "
          f"repetitions={agg.get('n_repetitions', '?')}, "
          f"skipped={len(payload.get('skipped', []))})")
    for name in (
        "eer_skilled",
        "eer_random",
        "far_random_at_eer_skilled",
        "far_skilled_hard",
        "frr_hard",
        "far_random_hard",
    ):
        value = agg.get(name)
        shown = "-" if value is None else f"{value:.2f}%"
        print(f"{name:<26}: {shown}")
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _add_patch_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--patch-size", type=int, default=5, help="odd patch side (default 5)")
    p.add_argument("--level", type=int, default=None,
                   help="thinning level (default: the image's optimal level)")
    p.add_argument("--no-center", action="store_true",
                   help="keep raw intensities instead of per-patch mean centering")


def _add_solver_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", choices=("omp", "lars"), default="omp")
    p.add_argument("--rho", type=int, default=3, help="active atoms per patch (omp)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.15,
                   help="l1 weight (lars)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sigsparse",
        description="Offline signature verification with sparse patch coding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="binarize, thin, and report the OTL")
    p.add_argument("image")
    _add_patch_opts(p)
    p.add_argument("--out-skeleton", required=True, help="output skeleton PGM/PNG")
    p.add_argument("--out-json", default=None,
                   help="sidecar path (default: <out-skeleton>.json)")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("learn-dict", help="learn a patch dictionary from images")
    p.add_argument("images", nargs="+")
    _add_patch_opts(p)
    p.add_argument("--method", choices=("ksvd", "online"), default="ksvd")
    p.add_argument("--atoms", type=int, default=60)
    p.add_argument("--rho", type=int, default=3)
    p.add_argument("--lambda", dest="lam", type=float, default=0.15)
    p.add_argument("--prior", choices=("none", "a-positive", "d-nonneg", "nmf"),
                   default="none")
    p.add_argument("--iters", type=int, default=50, help="full passes (ksvd)")
    p.add_argument("--update-iters", type=int, default=10,
                   help="warm-start passes per extra image (ksvd)")
    p.add_argument("--minibatch", type=int, default=512)
    p.add_argument("--batches", type=int, default=50, help="minibatches (online)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dictionary file")
    p.set_defaults(func=_cmd_learn_dict)

    p = sub.add_parser("encode", help="sparse-code one image against a dictionary")
    p.add_argument("image")
    _add_patch_opts(p)
    p.add_argument("--dict", required=True)
    _add_solver_opts(p)
    p.add_argument("--positive", action="store_true", help="non-negative codes")
    p.add_argument("--out", required=True, help="output .npy code matrix")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("features", help="build a pooled descriptor for one image")
    p.add_argument("image")
    _add_patch_opts(p)
    p.add_argument("--dict", required=True)
    _add_solver_opts(p)
    p.add_argument("--pooling", choices=("f1", "f2", "f3", "f4", "f5"), default="f3")
    p.add_argument("--beta", type=int, default=2)
    p.add_argument("--no-keypoints", action="store_true")
    p.add_argument("--kp-threshold", type=float, default=20.0)
    p.add_argument("--max-points", type=int, default=200)
    p.add_argument("--out", required=True, help=".json or binary descriptor path")
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("keypoints", help="detect corners, optionally assign to skeleton")
    p.add_argument("image")
    _add_patch_opts(p)
    p.add_argument("--threshold", type=float, default=20.0)
    p.add_argument("--octaves", type=int, default=3)
    p.add_argument("--arc", type=int, default=9)
    p.add_argument("--max-points", type=int, default=200)
    p.add_argument("--assign", action="store_true",
                   help="also map points to skeleton pixels")
    p.add_argument("--dump-json", default=None,
                   help="write the listing here instead of stdout")
    p.set_defaults(func=_cmd_keypoints)

    p = sub.add_parser("enroll", help="train a writer model from reference images")
    p.add_argument("--writer-id", required=True)
    p.add_argument("--refs", nargs="+", required=True, help="genuine reference images")
    p.add_argument("--negatives", nargs="+", required=True,
                   help="other-writer genuine images (exactly 2x the references)")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key")
    p.add_argument("--out", required=True, help="output writer-model file")
    p.set_defaults(func=_cmd_enroll)

    p = sub.add_parser("verify", help="score one image against a writer model")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--threshold", type=float, default=None,
                   help="extra decision threshold to evaluate")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("synth", help="generate a synthetic spline-stroke dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--writers", type=int, default=10)
    p.add_argument("--genuine", type=int, default=16)
    p.add_argument("--forgery", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=160)
    p.add_argument("--width", type=int, default=240)
    p.add_argument("--stroke-width", type=float, default=None,
                   help="fix the stroke width (default: per-writer random)")
    p.add_argument("--jitter", type=float, default=1.5)
    p.add_argument("--distortion", type=float, default=6.0,
                   help="forgery control-point displacement (0 = null effect)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("experiment", help="run the full verification protocol")
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key")
    p.add_argument("--out", default="runs", help="run-directory root (default runs/)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("report", help="print the digest of a finished run")
    p.add_argument("--run", required=True, help="run directory")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
