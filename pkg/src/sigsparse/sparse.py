"""Sparse coding over overcomplete dictionaries.

Two per-column solvers:

* :func:`omp_encode` — orthogonal matching pursuit with a fixed atom budget.
  Selection picks the atom most correlated with the current residual (by
  absolute value, or signed value under the positivity option), then
  re-projects on the selected set by least squares.  The implementation
  precomputes the Gram matrix ``D^T D`` and the correlations ``D^T X`` once
  and maintains a progressive Cholesky factorization of each column's
  selected sub-Gram, processing all columns in lockstep, so per-step work
  never touches the signal dimension again.
* :func:`lars_lasso_encode` — exact piecewise-linear homotopy for
  ``min_a 0.5*||x - D a||^2 + lam*||a||_1``, following the regularization
  path from ``lam_max = ||D^T x||_inf`` down to the requested ``lam``,
  adding or removing one atom per breakpoint.

Stopping for OMP: ``rho`` atoms, or earlier once the residual norm falls
below ``tol`` (relative to ``||x||``), the residual becomes orthogonal to
the dictionary, or the selected sub-Gram goes rank-deficient (flagged).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .flags import EarlyStopWarning, TieBreakWarning, warn
from .patches import PatchMatrix

__all__ = [
    "Dictionary",
    "SparseCodes",
    "omp_encode",
    "lars_lasso_encode",
    "reconstruction_error",
    "save_dictionary",
    "load_dictionary",
]

UNIT_BALL = "unit-ball"
NONNEG_UNIT_BALL = "nonneg-unit-ball"
_CONSTRAINT_CODES = {UNIT_BALL: 0, NONNEG_UNIT_BALL: 1}
_NORM_SLACK = 1e-9


@dataclass
class Dictionary:
    """Overcomplete dictionary: ``atoms`` is (n, K) with K > n and every
    column inside the unit ball (non-negative entries under the
    ``nonneg-unit-ball`` constraint)."""

    atoms: np.ndarray
    constraint_tag: str = UNIT_BALL
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        atoms = np.asarray(self.atoms, dtype=np.float64)
        if atoms.ndim != 2:
            raise ValueError("atoms must be a 2-D (n, K) array")
        n, k = atoms.shape
        if k <= n:
            raise ValueError(f"dictionary must be overcomplete: K={k} <= n={n}")
        if not np.isfinite(atoms).all():
            raise ValueError("atoms contain non-finite values")
        norms_sq = np.einsum("nk,nk->k", atoms, atoms)
        if (norms_sq > 1.0 + _NORM_SLACK).any():
            raise ValueError("atom norms exceed the unit ball")
        if self.constraint_tag not in _CONSTRAINT_CODES:
            raise ValueError(f"unknown constraint tag {self.constraint_tag!r}")
        if self.constraint_tag == NONNEG_UNIT_BALL and atoms.min() < -1e-12:
            raise ValueError("negative atom entries under the non-negative constraint")
        self.atoms = atoms

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def K(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class SparseCodes:
    """Coefficient matrix A, one column per encoded signal (dense storage)."""

    codes: np.ndarray
    solver_tag: str
    sparsity_param: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "codes", np.asarray(self.codes, dtype=np.float64))

    @property
    def K(self) -> int:
        return self.codes.shape[0]

    @property
    def M(self) -> int:
        return self.codes.shape[1]

    @property
    def nonzeros_per_column(self) -> np.ndarray:
        return (self.codes != 0.0).sum(axis=0)


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, PatchMatrix):
        x = x.data
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("signals must form an (n, M) matrix")
    return x


def _as_atoms(d) -> np.ndarray:
    if isinstance(d, Dictionary):
        return d.atoms
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError("dictionary must be an (n, K) matrix")
    return d


# --------------------------------------------------------------------------
# Orthogonal matching pursuit
# --------------------------------------------------------------------------

def _forward_sub(lstack: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L y = b for a stack of lower-triangular L, batched over axis 0."""
    m, s = b.shape
    y = np.empty_like(b)
    for j in range(s):
        acc = b[:, j].copy()
        if j:
            acc -= np.einsum("mi,mi->m", lstack[:, j, :j], y[:, :j])
        y[:, j] = acc / lstack[:, j, j]
    return y


def _backward_sub(lstack: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Solve L^T a = y for a stack of lower-triangular L, batched."""
    m, s = y.shape
    a = np.empty_like(y)
    for j in range(s - 1, -1, -1):
        acc = y[:, j].copy()
        if j < s - 1:
            acc -= np.einsum("mi,mi->m", lstack[:, j + 1 :, j], a[:, j + 1 :])
        a[:, j] = acc / lstack[:, j, j]
    return a


def _omp_batch(dm: np.ndarray, x: np.ndarray, rho: int, tol: float):
    """All-columns OMP over precomputed Gram/correlations with progressive
    Cholesky.  Returns (support, coeffs, nsel) arrays."""
    n, n_atoms = dm.shape
    m = x.shape[1]
    gram = dm.T @ dm
    corr0 = dm.T @ x  # (K, M), fixed
    xsq = np.einsum("nm,nm->m", x, x)

    support = np.zeros((m, rho), dtype=np.int64)
    coeffs = np.zeros((m, rho))
    nsel = np.zeros(m, dtype=np.int64)
    lchol = np.zeros((m, rho, rho))
    corr = corr0.copy()
    selected = np.zeros((m, n_atoms), dtype=bool)
    tol_sq = (tol * tol) * xsq
    stall = 1e-12 * np.sqrt(np.maximum(xsq, 1.0))
    active = xsq > 0.0
    rank_flagged = False

    for step in range(rho):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cabs = np.abs(corr[:, idx])
        cabs[selected[idx].T] = -1.0
        k = np.argmax(cabs, axis=0)  # lowest index wins ties
        cmax = cabs[k, np.arange(idx.size)]
        alive = cmax > stall[idx]  # residual orthogonal to dictionary: done
        active[idx[~alive]] = False
        idx, k = idx[alive], k[alive]
        if idx.size == 0:
            continue

        gkk = gram[k, k]
        if step == 0:
            ok = gkk > 1e-24
            lchol[idx[ok], 0, 0] = np.sqrt(gkk[ok])
        else:
            gsel = gram[support[idx, :step], k[:, None]]  # (m_act, step)
            w = _forward_sub(lchol[idx, :step, :step], gsel)
            d2 = gkk - np.einsum("mi,mi->m", w, w)
            ok = d2 > 1e-12
            if not ok.all():
                rank_flagged = True
                active[idx[~ok]] = False
            idx, k, w, d2 = idx[ok], k[ok], w[ok], d2[ok]
            if idx.size == 0:
                continue
            lchol[idx, step, :step] = w
            lchol[idx, step, step] = np.sqrt(d2)
        if step == 0 and not ok.all():  # zero-norm atom selected: give up
            rank_flagged = True
            active[idx[~ok]] = False
            idx, k = idx[ok], k[ok]
            if idx.size == 0:
                continue

        support[idx, step] = k
        selected[idx, k] = True
        nsel[idx] = step + 1

        sub = support[idx, : step + 1]  # (m_act, step+1)
        h_sub = corr0[sub, idx[:, None]]
        lsub = lchol[idx, : step + 1, : step + 1]
        a = _backward_sub(lsub, _forward_sub(lsub, h_sub))
        coeffs[idx, : step + 1] = a

        # Refresh correlations and residual norms from the Gram products.
        corr[:, idx] = corr0[:, idx] - np.einsum("kms,ms->km", gram[:, sub], a)
        resid_sq = xsq[idx] - np.einsum("ms,ms->m", a, h_sub)
        done = resid_sq <= np.maximum(tol_sq[idx], 0.0)
        active[idx[done]] = False

    if rank_flagged:
        warn(EarlyStopWarning, "rank-deficient atom selection: some columns stopped early")
    return support, coeffs, nsel


def _omp_positive_column(dm: np.ndarray, x: np.ndarray, rho: int, tol: float):
    """Greedy non-negative pursuit for one column: signed selection followed
    by a non-negative least-squares re-projection each step."""
    from scipy.optimize import nnls

    xnorm = float(np.linalg.norm(x))
    support: list[int] = []
    coef = np.zeros(0)
    if xnorm == 0.0:
        return support, coef
    residual = x.astype(np.float64, copy=True)
    for _ in range(rho):
        c = dm.T @ residual
        if support:
            c[support] = -np.inf
        k = int(np.argmax(c))
        if c[k] <= 1e-12 * max(xnorm, 1.0):
            break
        support.append(k)
        coef, _ = nnls(dm[:, support], x)
        residual = x - dm[:, support] @ coef
        if np.linalg.norm(residual) <= tol * xnorm:
            break
    return support, coef


def omp_encode(
    dictionary,
    signals,
    rho: int,
    positive: bool = False,
    tol: float = 1e-10,
) -> SparseCodes:
    """Encode each signal column with at most ``rho`` atoms.

    With ``positive`` the selection drops the absolute value (most positively
    correlated atom) and the re-projection is non-negative least squares, so
    all returned coefficients are >= 0.
    """
    dm = _as_atoms(dictionary)
    x = _as_matrix(signals)
    n, n_atoms = dm.shape
    if x.shape[0] != n:
        raise ValueError(f"signal dimension {x.shape[0]} != dictionary dimension {n}")
    if not 1 <= rho <= n:
        raise ValueError(f"rho must satisfy 1 <= rho <= n={n}")
    codes = np.zeros((n_atoms, x.shape[1]))
    if positive:
        for i in range(x.shape[1]):
            support, coef = _omp_positive_column(dm, x[:, i], rho, tol)
            if support:
                codes[support, i] = coef
    else:
        support, coeffs, nsel = _omp_batch(dm, x, rho, tol)
        for i in np.flatnonzero(nsel):
            s = nsel[i]
            codes[support[i, :s], i] = coeffs[i, :s]
    return SparseCodes(codes, "omp", float(rho))


# --------------------------------------------------------------------------
# LARS-Lasso homotopy
# --------------------------------------------------------------------------

def _solve_psd(g: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(g, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(g, rhs, rcond=None)[0]


def _lars_column(dm: np.ndarray, x: np.ndarray, lam: float, positive: bool) -> np.ndarray:
    n, n_atoms = dm.shape
    alpha = np.zeros(n_atoms)
    c0 = dm.T @ x
    entry_crit = c0 if positive else np.abs(c0)
    lam_max = float(entry_crit.max(initial=0.0))
    if lam >= lam_max:
        return alpha  # zero is optimal: all correlations within the penalty

    scale = max(lam_max, 1.0)
    tie_tol = 1e-12 * scale
    first = int(np.argmax(entry_crit))
    if np.count_nonzero(entry_crit >= lam_max - tie_tol) > 1:
        warn(TieBreakWarning, "tied entry correlations: taking the lowest atom index")
    active = [first]
    signs = [1.0 if positive or c0[first] >= 0 else -1.0]
    lam_cur = lam_max

    in_active = np.zeros(n_atoms, dtype=bool)
    in_active[first] = True

    for _ in range(8 * n_atoms + 16):
        a_idx = np.asarray(active)
        s_vec = np.asarray(signs)
        da = dm[:, a_idx]
        ga = da.T @ da
        ginv_b = _solve_psd(ga, da.T @ x)
        ginv_s = _solve_psd(ga, s_vec)

        # Inactive correlations are linear in lam: c_j(lam) = u_j + lam*v_j.
        u = dm.T @ (x - da @ ginv_b)
        v = dm.T @ (da @ ginv_s)

        step_tol = 1e-12 * max(lam_cur, 1.0)
        best_lam = lam
        best_event: tuple[int, int] | None = None  # (kind, atom); kind 0=drop, 1=add

        drop_den = ginv_s
        with np.errstate(divide="ignore", invalid="ignore"):
            drop_lam = np.where(np.abs(drop_den) > 1e-300, ginv_b / drop_den, -np.inf)
        for pos_in_active, atom in enumerate(active):
            cand = drop_lam[pos_in_active]
            if lam < cand < lam_cur - step_tol and cand > best_lam:
                best_lam, best_event = float(cand), (0, atom)
            elif best_event is not None and abs(cand - best_lam) <= tie_tol and lam < cand < lam_cur - step_tol:
                if best_event[0] != 0 or atom < best_event[1]:
                    best_event = (0, atom)
                    warn(TieBreakWarning, "tied path breakpoints: deterministic choice")

        inactive_idx = np.flatnonzero(~in_active)
        for j in inactive_idx:
            cands = []
            den_plus = 1.0 - v[j]
            if abs(den_plus) > 1e-300:
                cands.append(u[j] / den_plus)
            if not positive:
                den_minus = 1.0 + v[j]
                if abs(den_minus) > 1e-300:
                    cands.append(-u[j] / den_minus)
            for cand in cands:
                if not (lam < cand < lam_cur - step_tol):
                    continue
                if cand > best_lam + tie_tol:
                    best_lam, best_event = float(cand), (1, int(j))
                elif best_event is not None and abs(cand - best_lam) <= tie_tol:
                    # Drops outrank adds at an exact tie; otherwise lowest index.
                    if best_event[0] == 1 and j < best_event[1]:
                        best_event = (1, int(j))
                        warn(TieBreakWarning, "tied path breakpoints: deterministic choice")

        if best_event is None:
            alpha[a_idx] = ginv_b - lam * ginv_s
            break

        kind, atom = best_event
        if kind == 0:
            pos_in_active = active.index(atom)
            del active[pos_in_active]
            del signs[pos_in_active]
            in_active[atom] = False
            if not active:
                # Path re-enters the all-zero state; next atom by entry rule.
                c_here = u + best_lam * v
                crit = c_here if positive else np.abs(c_here)
                nxt = int(np.argmax(crit))
                active, signs = [nxt], [1.0 if positive or c_here[nxt] >= 0 else -1.0]
                in_active[nxt] = True
        else:
            c_at = u[atom] + best_lam * v[atom]
            active.append(atom)
            signs.append(1.0 if positive or c_at >= 0 else -1.0)
            in_active[atom] = True
        lam_cur = best_lam
    else:
        warn(EarlyStopWarning, "homotopy event budget exhausted; returning current point")
        a_idx = np.asarray(active)
        da = dm[:, a_idx]
        ga = da.T @ da
        alpha[a_idx] = _solve_psd(ga, da.T @ x) - lam * _solve_psd(ga, np.asarray(signs))

    if positive:
        np.maximum(alpha, 0.0, out=alpha)  # clear roundoff-level negatives
    return alpha


def lars_lasso_encode(dictionary, signals, lam: float, positive: bool = False) -> SparseCodes:
    """Solve ``min_a 0.5*||x - D a||^2 + lam*||a||_1`` exactly per column via
    the homotopy path.  ``lam >= ||D^T x||_inf`` yields an exact zero column;
    with ``positive`` coefficients are constrained to be >= 0."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    dm = _as_atoms(dictionary)
    x = _as_matrix(signals)
    if x.shape[0] != dm.shape[0]:
        raise ValueError(f"signal dimension {x.shape[0]} != dictionary dimension {dm.shape[0]}")
    codes = np.empty((dm.shape[1], x.shape[1]))
    for i in range(x.shape[1]):
        codes[:, i] = _lars_column(dm, x[:, i], float(lam), positive)
    return SparseCodes(codes, "lars", float(lam))


def reconstruction_error(dictionary, signals, codes: SparseCodes | np.ndarray) -> float:
    """Frobenius norm of ``X - D A``."""
    dm = _as_atoms(dictionary)
    x = _as_matrix(signals)
    a = codes.codes if isinstance(codes, SparseCodes) else np.asarray(codes)
    return float(np.linalg.norm(x - dm @ a))


# --------------------------------------------------------------------------
# Dictionary file format
# --------------------------------------------------------------------------
#
# Binary layout (little-endian):
#   bytes 0-3   magic b"SSDC"
#   uint32      format version (1)
#   uint32      n (signal dimension)
#   uint32      K (atom count)
#   uint8       constraint code (0 = unit-ball, 1 = nonneg-unit-ball)
#   float64[nK] atoms, row-major
# A JSON sidecar at <path>.json carries the free-form metadata dict.

_DICT_MAGIC = b"SSDC"
_DICT_VERSION = 1


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def save_dictionary(path: str | os.PathLike, dictionary: Dictionary) -> None:
    path = os.fspath(path)
    with open(path, "wb") as fh:
        fh.write(_DICT_MAGIC)
        fh.write(
            struct.pack(
                "<IIIB",
                _DICT_VERSION,
                dictionary.n,
                dictionary.K,
                _CONSTRAINT_CODES[dictionary.constraint_tag],
            )
        )
        fh.write(np.ascontiguousarray(dictionary.atoms).tobytes())
    with open(path + ".json", "w") as fh:
        json.dump(_jsonable(dictionary.meta), fh, indent=2)
        fh.write("\n")


def load_dictionary(path: str | os.PathLike) -> Dictionary:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        if fh.read(4) != _DICT_MAGIC:
            raise ValueError("not a dictionary file (bad magic)")
        version, n, k, code = struct.unpack("<IIIB", fh.read(13))
        if version != _DICT_VERSION:
            raise ValueError(f"unsupported dictionary format version {version}")
        raw = fh.read(8 * n * k)
    if len(raw) != 8 * n * k:
        raise ValueError("truncated dictionary file")
    tags = {v: k_ for k_, v in _CONSTRAINT_CODES.items()}
    if code not in tags:
        raise ValueError(f"unknown constraint code {code}")
    atoms = np.frombuffer(raw, dtype="<f8").reshape(n, k).copy()
    meta: dict = {}
    sidecar = path + ".json"
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            meta = json.load(fh)
    return Dictionary(atoms, tags[code], meta)
