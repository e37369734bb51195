"""Offline signature verification with sparse patch coding.

Pipeline: binarize and thin a signature to its optimal level, gather small
grayscale patches at the skeleton pixels, code them against a learned
overcomplete dictionary, pool the codes over spatial regions into a fixed
descriptor, and verify claims with a per-writer RBF SVM.  The ``harness``
module orchestrates the full evaluation protocol on directory datasets and
can synthesize desk-scale test data.
"""

from .descriptor import (
    POOLING_TAGS,
    SegmentMap,
    SignatureDescriptor,
    build_descriptor,
    equimass_segment,
    load_descriptor_bin,
    load_descriptor_json,
    pool,
    save_descriptor_bin,
    save_descriptor_json,
)
from .dictlearn import PRIORS, ksvd_fit, ksvd_update, online_fit
from .flags import DegenerateInputWarning, EarlyStopWarning, TieBreakWarning
from .harness import (
    DatasetLayout,
    ExperimentConfig,
    NoiseSpec,
    WriterFiles,
    add_noise,
    enroll_writer,
    image_descriptor,
    median_filter,
    run_experiment,
    synth_generate,
)
from .imageproc import (
    PatchDensityCurve,
    SkeletonImage,
    motl,
    optimal_thinning_level,
    otsu_level,
    otsu_threshold,
    patch_density,
    thin_once,
    thin_to_level,
)
from .imgio import load_gray, mask_to_gray, save_gray
from .keypoints import KeypointSet, assign_to_skeleton, detect_keypoints
from .metrics import (
    MetricsReport,
    ScoreSet,
    WriterMetrics,
    aggregate_metrics,
    compute_writer_metrics,
    eer,
    eer_from_curve,
    far_at,
    far_frr_curve,
    frr_at,
    p_far_r_at_eer_s,
)
from .patches import (
    PatchMatrix,
    background_level,
    extract_patches,
    load_patch_matrix,
    save_patch_matrix,
)
from .sparse import (
    NONNEG_UNIT_BALL,
    UNIT_BALL,
    Dictionary,
    SparseCodes,
    lars_lasso_encode,
    load_dictionary,
    omp_encode,
    reconstruction_error,
    save_dictionary,
)
from .verifier import (
    LabeledFeatureSet,
    default_grid,
    SvmClassifier,
    VerifierModel,
    WriterModel,
    auc_score,
    hard_threshold,
    load_writer_model,
    save_writer_model,
    score,
    train_svm,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # imgio
    "load_gray", "save_gray", "mask_to_gray",
    # imageproc
    "otsu_level", "otsu_threshold", "thin_once", "thin_to_level",
    "SkeletonImage", "patch_density", "PatchDensityCurve",
    "optimal_thinning_level", "motl",
    # patches
    "PatchMatrix", "extract_patches", "background_level",
    "save_patch_matrix", "load_patch_matrix",
    # sparse
    "Dictionary", "SparseCodes", "UNIT_BALL", "NONNEG_UNIT_BALL",
    "omp_encode", "lars_lasso_encode", "reconstruction_error",
    "save_dictionary", "load_dictionary",
    # dictlearn
    "PRIORS", "ksvd_fit", "ksvd_update", "online_fit",
    # keypoints
    "KeypointSet", "detect_keypoints", "assign_to_skeleton",
    # descriptor
    "POOLING_TAGS", "pool", "SegmentMap", "equimass_segment",
    "SignatureDescriptor", "build_descriptor",
    "save_descriptor_json", "load_descriptor_json",
    "save_descriptor_bin", "load_descriptor_bin",
    # verifier
    "LabeledFeatureSet", "SvmClassifier", "VerifierModel", "WriterModel",
    "auc_score", "train_svm", "score", "hard_threshold", "default_grid",
    "save_writer_model", "load_writer_model",
    # metrics
    "ScoreSet", "WriterMetrics", "MetricsReport", "far_frr_curve",
    "eer", "eer_from_curve", "far_at", "frr_at", "p_far_r_at_eer_s",
    "compute_writer_metrics", "aggregate_metrics",
    # harness
    "NoiseSpec", "ExperimentConfig", "DatasetLayout", "WriterFiles",
    "add_noise", "median_filter", "synth_generate", "image_descriptor",
    "enroll_writer", "run_experiment",
    # flags
    "DegenerateInputWarning", "TieBreakWarning", "EarlyStopWarning",
]
