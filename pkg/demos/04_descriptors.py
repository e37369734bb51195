"""
From sparse codes to a fixed-length signature descriptor
========================================================

Pooling squeezes the (atoms x patches) code matrix into one vector per
region.  Regions come from an equal-ink spatial pyramid (beta x beta cells)
plus one extra region around detected corner points; together with the
whole-signature pool the descriptor always has (beta^2 + 2) * K values.
"""

import numpy as np

from sigsparse import (
    assign_to_skeleton,
    build_descriptor,
    detect_keypoints,
    equimass_segment,
    extract_patches,
    ksvd_fit,
    load_gray,
    omp_encode,
    optimal_thinning_level,
    otsu_level,
    pool,
    synth_generate,
    thin_to_level,
)

# --------------------------------------------------------------------------
# Prepare one signature: skeleton, patches, dictionary, codes.
# --------------------------------------------------------------------------

layout = synth_generate("demo-data", n_writers=1, n_genuine=3, n_forgery=2, seed=4)
writer = layout.writers[layout.writer_ids[0]]
gray = load_gray(writer.genuine[0])
mask = gray <= otsu_level(gray)
otl, _ = optimal_thinning_level(mask, 3)
skeleton = thin_to_level(mask, otl)
patches = extract_patches(gray, skeleton, 5, center=True)
x = patches.data / 255.0

d = ksvd_fit(x, 60, 3, iters=15, seed=7)
codes = omp_encode(d, x, 3)
print(f"code matrix: {codes.codes.shape} (atoms x skeleton pixels)")

# --------------------------------------------------------------------------
# The five pooling functions, applied over all patches at once.
# --------------------------------------------------------------------------

print("\npooling functions on the full code matrix (first 4 of 60 values):")
for tag, label in [("f1", "mean"), ("f2", "max"), ("f3", "std"),
                   ("f4", "sum/total"), ("f5", "sum/l2")]:
    vec = pool(codes.codes, tag)
    head = "  ".join(f"{v:+.3f}" for v in vec[:4])
    print(f"  {tag} ({label:9s}): {head} ...")

# --------------------------------------------------------------------------
# The equal-ink pyramid: strips cut vertically by cumulative column mass,
# bands cut within each strip so masses differ by at most one pixel.
# --------------------------------------------------------------------------

beta = 2
seg = equimass_segment(skeleton.mask, beta)
print(f"\nequimass cells (beta={beta}): masses {seg.masses().tolist()} "
      f"(total ink {skeleton.mask.sum()})")

# --------------------------------------------------------------------------
# Corner-like keypoints on the grayscale image, snapped to the nearest
# skeleton pixel so they index into the code matrix columns.
# --------------------------------------------------------------------------

kps = detect_keypoints(gray, threshold=10.0, octaves=2)
snapped = assign_to_skeleton(kps, skeleton)
print(f"\n{len(snapped)} keypoints detected and snapped to skeleton pixels")

# --------------------------------------------------------------------------
# Assemble: [whole signature | beta^2 pyramid cells | keypoint region],
# each block K values, so the length is (beta^2 + 2) * K.
# --------------------------------------------------------------------------

desc = build_descriptor(codes.codes, skeleton.mask, seg, snapped, "f3")
print(f"\ndescriptor length {len(desc)} = (beta^2 + 2) * K "
      f"= ({beta}^2 + 2) * 60")
blocks = desc.values.reshape(beta * beta + 2, 60)
norms = "  ".join(f"{np.linalg.norm(b):.3f}" for b in blocks)
print(f"per-block l2 norms: {norms}")
