"""Dictionary learning: batch K-SVD, its cascade (warm-start) update, and
mini-batch online learning with optional sign priors.

K-SVD alternates a sparse-coding pass (OMP at fixed sparsity) with per-atom
rank-1 updates: for atom k, the residual restricted to the signals using it
is refit by the leading singular pair, which simultaneously renews the atom
(unit norm) and its coefficient row.  Atoms used by no signal are replaced
by the currently worst-reconstructed signal.

Online learning cycles eta-sized mini-batches: encode with the l1 homotopy
solver, fold the batch's second-order statistics into running averages with
a 1/t decay, then make one block-coordinate pass over the atoms, projecting
each onto the unit ball (optionally after clipping at zero for non-negative
dictionaries).
"""

from __future__ import annotations

import time

import numpy as np

from .flags import DegenerateInputWarning, warn
from .sparse import (
    NONNEG_UNIT_BALL,
    UNIT_BALL,
    Dictionary,
    lars_lasso_encode,
    omp_encode,
    _as_matrix,
)

__all__ = ["ksvd_fit", "ksvd_update", "online_fit", "PRIORS"]

PRIORS = ("a-positive", "d-nonneg", "nmf")


def _init_from_columns(x: np.ndarray, n_atoms: int, rng: np.random.Generator,
                       nonneg: bool = False) -> np.ndarray:
    """Pick ``n_atoms`` distinct columns of ``x``, normalized to unit norm.
    Zero columns are replaced by random unit vectors."""
    m = x.shape[1]
    idx = rng.choice(m, size=n_atoms, replace=False)
    atoms = x[:, idx].astype(np.float64, copy=True)
    if nonneg:
        np.maximum(atoms, 0.0, out=atoms)
    norms = np.linalg.norm(atoms, axis=0)
    for j in np.flatnonzero(norms < 1e-12):
        v = rng.standard_normal(x.shape[0])
        if nonneg:
            v = np.abs(v)
        atoms[:, j] = v
        norms[j] = np.linalg.norm(v)
    atoms /= norms
    return atoms


def _canonical_sign(atom: np.ndarray, row: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Resolve the SVD sign ambiguity: largest-magnitude atom entry positive."""
    peak = np.argmax(np.abs(atom))
    if atom[peak] < 0:
        return -atom, -row
    return atom, row


def _ksvd_pass(
    atoms: np.ndarray,
    x: np.ndarray,
    rho: int,
    prev_codes: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One K-SVD iteration in place: encode, update every atom, replace dead
    atoms.  Returns (codes, atoms).

    Greedy re-encoding alone can regress past the previous iteration's codes.
    When ``prev_codes`` is given and the fresh encode increases the total
    residual, each affected column falls back to whichever of the two codes
    (both rho-sparse) fits better; the atom updates below only decrease the
    residual further, so the per-iteration objective is non-increasing."""
    n, n_atoms = atoms.shape
    codes = omp_encode(atoms, x, rho).codes
    if prev_codes is not None:
        r_new = np.einsum("nm,nm->m", x - atoms @ codes, x - atoms @ codes)
        r_prev = np.einsum(
            "nm,nm->m", x - atoms @ prev_codes, x - atoms @ prev_codes
        )
        if r_new.sum() > r_prev.sum():
            keep = r_prev < r_new
            codes[:, keep] = prev_codes[:, keep]
    for k in range(n_atoms):
        users = np.flatnonzero(codes[k])
        if users.size == 0:
            continue
        # Residual with atom k's contribution added back, restricted to users.
        e = x[:, users] - atoms @ codes[:, users] + np.outer(atoms[:, k], codes[k, users])
        u, s, vt = np.linalg.svd(e, full_matrices=False)
        atom, row = _canonical_sign(u[:, 0], s[0] * vt[0])
        atoms[:, k] = atom
        codes[k, users] = row
    # Replace unused atoms with the worst-represented signals.
    dead = np.flatnonzero((codes != 0.0).sum(axis=1) == 0)
    if dead.size:
        resid = x - atoms @ codes
        order = np.argsort(-np.einsum("nm,nm->m", resid, resid))
        for slot, k in enumerate(dead):
            col = x[:, order[slot % len(order)]]
            nrm = np.linalg.norm(col)
            if nrm < 1e-12:
                continue
            atoms[:, k] = col / nrm
    return codes, atoms


def _check_ksvd_args(x: np.ndarray, n_atoms: int, rho: int, iters: int) -> None:
    n, m = x.shape
    if n_atoms <= n:
        raise ValueError(f"need an overcomplete dictionary: K={n_atoms} <= n={n}")
    if m < n_atoms:
        raise ValueError(f"need at least K={n_atoms} signals, got M={m}")
    if not 1 <= rho <= n:
        raise ValueError(f"rho must satisfy 1 <= rho <= n={n}")
    if iters < 1:
        raise ValueError("iters must be >= 1")


def ksvd_fit(
    signals,
    n_atoms: int,
    rho: int,
    iters: int = 50,
    seed: int | None = None,
) -> Dictionary:
    """Learn an (n, K) unit-norm dictionary from scratch.

    Initialization draws K distinct normalized signal columns (seed recorded
    in ``meta['init_seed']``); ``meta['objective']`` logs the squared
    reconstruction error after every full iteration (non-increasing).
    """
    x = _as_matrix(signals)
    _check_ksvd_args(x, n_atoms, rho, iters)
    ss = np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)
    atoms = _init_from_columns(x, n_atoms, rng)
    objective = []
    codes = None
    for _ in range(iters):
        codes, atoms = _ksvd_pass(atoms, x, rho, codes)
        objective.append(float(np.linalg.norm(x - atoms @ codes) ** 2))
    meta = {
        "method": "ksvd",
        "rho": rho,
        "iters": iters,
        "init_seed": int(ss.entropy),
        "objective": objective,
    }
    return Dictionary(atoms, UNIT_BALL, meta)


def ksvd_update(
    dictionary: Dictionary,
    signals,
    rho: int,
    iters: int = 10,
) -> Dictionary:
    """Warm-start K-SVD refinement on new signals only (the cascade step).

    Atom count and constraint carry over; the returned metadata logs the
    objective on the new signals per iteration.
    """
    if dictionary.constraint_tag != UNIT_BALL:
        raise ValueError("K-SVD updates require an unconstrained-sign dictionary")
    x = _as_matrix(signals)
    if x.shape[0] != dictionary.n:
        raise ValueError("signal dimension does not match the dictionary")
    _check_ksvd_args(x, dictionary.K, rho, iters)
    atoms = dictionary.atoms.copy()
    objective = []
    codes = None
    for _ in range(iters):
        codes, atoms = _ksvd_pass(atoms, x, rho, codes)
        objective.append(float(np.linalg.norm(x - atoms @ codes) ** 2))
    meta = dict(dictionary.meta)
    meta.setdefault("updates", [])
    meta["updates"] = list(meta["updates"]) + [
        {"rho": rho, "iters": iters, "objective": objective}
    ]
    return Dictionary(atoms, UNIT_BALL, meta)


def online_fit(
    stream,
    n_atoms: int,
    lam: float,
    minibatch: int = 512,
    time_budget: float = 60.0,
    max_batches: int | None = None,
    prior: str | None = None,
    seed: int | None = None,
) -> Dictionary:
    """Mini-batch online dictionary learning with the l1 coding objective.

    ``stream`` is a patch matrix or an iterable of them; their columns form
    the sampling pool.  ``prior`` selects a sign constraint: ``a-positive``
    (non-negative codes), ``d-nonneg`` (non-negative atoms), ``nmf`` (both;
    expects un-centered input).  The loop runs until ``max_batches`` when
    given (deterministic mode), otherwise until ``time_budget`` seconds have
    elapsed.  ``meta['surrogate']`` logs the per-batch mean coding objective
    ``0.5*||x - Da||^2 + lam*||a||_1``.
    """
    if prior is not None and prior not in PRIORS:
        raise ValueError(f"unknown prior {prior!r}; expected one of {PRIORS}")
    if lam <= 0:
        raise ValueError("lam must be positive")
    if minibatch < 1:
        raise ValueError("minibatch must be >= 1")
    if max_batches is None and time_budget <= 0:
        raise ValueError("need a positive time budget or an explicit batch count")

    chunks = [stream] if isinstance(stream, np.ndarray) or hasattr(stream, "data") else list(stream)
    pool = np.concatenate([_as_matrix(c) for c in chunks], axis=1)
    n, m_pool = pool.shape
    if n_atoms <= n:
        raise ValueError(f"need an overcomplete dictionary: K={n_atoms} <= n={n}")
    if m_pool < n_atoms:
        raise ValueError(f"need at least K={n_atoms} pooled signals, got {m_pool}")

    positive_codes = prior in ("a-positive", "nmf")
    nonneg_atoms = prior in ("d-nonneg", "nmf")
    if prior == "nmf" and pool.min() < 0:
        warn(DegenerateInputWarning, "nmf prior expects non-negative (un-centered) input")

    ss = np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)
    atoms = _init_from_columns(pool, n_atoms, rng, nonneg=nonneg_atoms)

    a_stat = np.zeros((n_atoms, n_atoms))
    b_stat = np.zeros((n, n_atoms))
    surrogate: list[float] = []
    start = time.monotonic()
    t = 0
    while True:
        if max_batches is not None:
            if t >= max_batches:
                break
        elif t > 0 and time.monotonic() - start >= time_budget:
            break
        t += 1
        take = min(minibatch, m_pool)
        idx = rng.choice(m_pool, size=take, replace=m_pool < minibatch)
        xb = pool[:, idx]
        ab = lars_lasso_encode(atoms, xb, lam, positive=positive_codes).codes
        resid = xb - atoms @ ab
        surrogate.append(
            float(0.5 * np.einsum("nm,nm->", resid, resid) / take
                  + lam * np.abs(ab).sum() / take)
        )
        # Running averages with 1/t decay; the atom update below only sees
        # the ratio B/A so averaging matches accumulation.
        a_stat += (ab @ ab.T / take - a_stat) / t
        b_stat += (xb @ ab.T / take - b_stat) / t
        # One block-coordinate pass over the atoms.
        for j in range(n_atoms):
            ajj = a_stat[j, j]
            if ajj <= 1e-10:
                continue
            u = atoms[:, j] + (b_stat[:, j] - atoms @ a_stat[:, j]) / ajj
            if nonneg_atoms:
                np.maximum(u, 0.0, out=u)
            nrm = np.linalg.norm(u)
            if nrm < 1e-12:
                continue  # keep the previous atom rather than a zero one
            atoms[:, j] = u / max(1.0, nrm)

    meta = {
        "method": "online",
        "lam": lam,
        "minibatch": minibatch,
        "batches": t,
        "prior": prior,
        "init_seed": int(ss.entropy),
        "surrogate": surrogate,
    }
    tag = NONNEG_UNIT_BALL if nonneg_atoms else UNIT_BALL
    return Dictionary(atoms, tag, meta)
