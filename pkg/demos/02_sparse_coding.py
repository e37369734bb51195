"""
Coding signature patches against an overcomplete dictionary
===========================================================

Every skeleton pixel contributes one small grayscale patch.  Each patch is
approximated as a combination of a few dictionary atoms; the combination
weights (the sparse code) are what the descriptor later pools.  Two solvers
are available: greedy pursuit with a fixed number of atoms, and an l1 path
solver with a penalty that trades sparsity against fit.
"""

import numpy as np

from sigsparse import (
    extract_patches,
    lars_lasso_encode,
    load_gray,
    omp_encode,
    optimal_thinning_level,
    otsu_level,
    reconstruction_error,
    synth_generate,
    thin_to_level,
)

rng = np.random.default_rng(0)

# --------------------------------------------------------------------------
# Gather 5x5 patches at skeleton pixels of one synthetic signature.  The
# harness scales intensities to [0, 1] before coding; do the same here.
# --------------------------------------------------------------------------

layout = synth_generate("demo-data", n_writers=1, n_genuine=3, n_forgery=2, seed=4)
gray = load_gray(layout.writers[layout.writer_ids[0]].genuine[0])
mask = gray <= otsu_level(gray)
otl, _ = optimal_thinning_level(mask, 3)
skeleton = thin_to_level(mask, otl)

patches = extract_patches(gray, skeleton, 5, center=True)
x = patches.data / 255.0
print(f"{x.shape[1]} patches of dimension {x.shape[0]}")

# --------------------------------------------------------------------------
# A stand-in dictionary: 60 random unit atoms.  (Demo 03 learns a real one.)
# --------------------------------------------------------------------------

atoms = rng.normal(size=(25, 60))
atoms /= np.linalg.norm(atoms, axis=0)

# --------------------------------------------------------------------------
# Greedy pursuit: exactly rho atoms per patch (fewer only if the residual
# hits zero first).  The mean residual falls as rho grows.
# --------------------------------------------------------------------------

print("\ngreedy pursuit, residual vs sparsity:")
for rho in (1, 2, 3, 5, 8):
    codes = omp_encode(atoms, x, rho)
    err = reconstruction_error(atoms, x, codes) / np.linalg.norm(x)
    nnz = codes.nonzeros_per_column.mean()
    print(f"  rho={rho}: mean nonzeros {nnz:.2f}, relative residual {err:.4f}")

# --------------------------------------------------------------------------
# The l1 path solver chooses its own support size per patch: a larger
# penalty buys sparser codes at a higher residual.
# --------------------------------------------------------------------------

print("\nl1 path solver, sparsity vs penalty:")
for lam in (0.5, 0.15, 0.05, 0.01):
    codes = lars_lasso_encode(atoms, x, lam)
    err = reconstruction_error(atoms, x, codes) / np.linalg.norm(x)
    nnz = codes.nonzeros_per_column.mean()
    print(f"  lam={lam}: mean nonzeros {nnz:.2f}, relative residual {err:.4f}")
