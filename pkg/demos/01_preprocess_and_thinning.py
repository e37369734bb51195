"""
Binarization, thinning, and picking the optimal thinning level
==============================================================

A signature arrives as a grayscale image.  Verification works on a thinned
ink mask, and the right amount of thinning is writer-specific: thin too
little and patches see thick blobs, thin too much and pen-pressure detail is
gone.  The package picks the level where the patch-density curve drops the
steepest, then takes the median of that level over a writer's references.
"""

import numpy as np

from sigsparse import (
    load_gray,
    motl,
    optimal_thinning_level,
    otsu_level,
    patch_density,
    synth_generate,
    thin_to_level,
)

# --------------------------------------------------------------------------
# Synthesize a small dataset so the demo is self-contained, then load one
# genuine signature as a grayscale uint8 array.
# --------------------------------------------------------------------------

layout = synth_generate("demo-data", n_writers=2, n_genuine=5, n_forgery=3, seed=4)
writer = layout.writers[layout.writer_ids[0]]
gray = load_gray(writer.genuine[0])
print(f"loaded {writer.genuine[0]}  shape={gray.shape}  dtype={gray.dtype}")

# --------------------------------------------------------------------------
# Binarize with Otsu's threshold: ink is the dark minority class.
# --------------------------------------------------------------------------

level = otsu_level(gray)
mask = gray <= level
print(f"otsu level {level}: {mask.sum()} ink pixels "
      f"({100 * mask.mean():.1f}% of the canvas)")

# --------------------------------------------------------------------------
# Patch density is the mean ink fraction of a small window centered at every
# ink pixel.  Thinning lowers it level by level; the optimal thinning level
# (OTL) sits right after the steepest drop of that curve.
# --------------------------------------------------------------------------

otl, curve = optimal_thinning_level(mask, 3)
print("\npatch-density curve (window 3):")
for lvl, pd in enumerate(curve.pd):
    marker = "  <- OTL" if lvl == otl else ""
    print(f"  level {lvl}: {pd:.4f}{marker}")

skeleton = thin_to_level(mask, otl)
print(f"\nthinned to level {otl}: {skeleton.mask.sum()} ink pixels "
      f"(from {mask.sum()}), density "
      f"{patch_density(skeleton.mask, 3):.4f}")

# --------------------------------------------------------------------------
# A writer's operating level is the median OTL (MOTL) over reference masks,
# so a single odd reference cannot skew it.
# --------------------------------------------------------------------------

refs = [load_gray(p) for p in writer.genuine]
ref_masks = [g <= otsu_level(g) for g in refs]
per_ref = [optimal_thinning_level(m, 3)[0] for m in ref_masks]
print(f"\nper-reference OTLs: {per_ref}  ->  MOTL {motl(ref_masks, 3)}")
