"""Kernel acceleration layer.

Hot inner loops (the simplex-constrained min-norm solve and pairwise
dominance scans) are compiled with numba when available. Set
``MOOGRAD_DISABLE_NUMBA=1`` (or numba's own ``NUMBA_DISABLE_JIT=1``) to force
the pure-numpy fallback; both paths compute bit-identical results.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_wanted() -> bool:
    if os.environ.get("MOOGRAD_DISABLE_NUMBA", "").strip() not in ("", "0"):
        return False
    if os.environ.get("NUMBA_DISABLE_JIT", "").strip() not in ("", "0"):
        return False
    return True


NUMBA_ENABLED = False
if _numba_wanted():
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def maybe_jit(fn):
    """Return an njit-compiled version of ``fn``, or ``fn`` itself when jit is off."""
    if NUMBA_ENABLED:
        return njit(cache=True)(fn)
    return fn


def fw_min_norm_py(gram, tol, max_iter):
    """Frank-Wolfe on min_{lam in simplex} lam' G lam for a PSD Gram matrix.

    Starts from the uniform weights, picks the lowest-index minimizing vertex,
    and takes the exact line-search step on the 1-D quadratic. Returns
    ``(lam, gap, iterations, converged)`` where ``gap`` is the Frank-Wolfe
    duality gap at exit.
    """
    m = gram.shape[0]
    lam = np.full(m, 1.0 / m)
    grad = gram @ lam
    gap = 0.0
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        obj = float(lam @ grad)
        j = 0
        best = grad[0]
        for i in range(1, m):
            if grad[i] < best:
                best = grad[i]
                j = i
        gap = 2.0 * (obj - best)
        if gap <= tol:
            converged = True
            break
        # exact minimizer of h(t) = |(1-t) W'lam + t w_j|^2 over t in [0,1]
        denom = obj - 2.0 * grad[j] + gram[j, j]
        if denom <= 0.0:
            converged = gap <= tol
            break
        t = (obj - grad[j]) / denom
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        lam = (1.0 - t) * lam
        lam[j] += t
        grad = (1.0 - t) * grad + t * gram[:, j].copy()
    return lam, gap, it, converged


def nondominated_mask_py(values):
    """Boolean mask of rows of ``values`` not dominated by any other row.

    Row a dominates row b when a <= b componentwise with at least one strict
    inequality (minimization).
    """
    n, m = values.shape
    keep = np.ones(n, dtype=np.bool_)
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            le_all = True
            lt_any = False
            for t in range(m):
                if values[j, t] > values[i, t]:
                    le_all = False
                    break
                if values[j, t] < values[i, t]:
                    lt_any = True
            if le_all and lt_any:
                keep[i] = False
                break
    return keep


fw_min_norm = maybe_jit(fw_min_norm_py)
nondominated_mask = maybe_jit(nondominated_mask_py)
