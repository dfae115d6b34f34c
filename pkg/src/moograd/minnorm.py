"""Min-norm-over-simplex subproblem and the common-descent direction.

Given a stack of per-objective gradient rows W (M x N), solve
``min_{lam in simplex} |W' lam|^2`` with Frank-Wolfe on the M x M Gram
matrix. ``combined`` is ``W' lam`` (the convex combination of the rows);
``descent_direction`` is its negation, and every optimizer in this package
updates ``x <- x + alpha * descent_direction``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import accel
from .autodiff import all_finite


def validate_gradient_matrix(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"gradient matrix must be 2-D, got shape {w.shape}")
    m, n = w.shape
    if m < 2 or n < 1:
        raise ValueError(f"gradient matrix needs M >= 2 rows and N >= 1 cols, got {w.shape}")
    if not all_finite(w):
        raise ValueError("gradient matrix contains non-finite entries")
    return w


@dataclass
class MinNormSolution:
    weights: np.ndarray          # lam on the simplex, shape (M,)
    combined: np.ndarray         # W' lam, shape (N,)
    descent_direction: np.ndarray  # -combined
    dual_norm_sq: float          # |W' lam|^2
    gap: float                   # Frank-Wolfe duality gap at exit
    iterations: int
    converged: bool


def solve_min_norm(w, tol: float = 1e-10, max_iter: int | None = None) -> MinNormSolution:
    """Min-norm convex combination of the rows of ``w``.

    Never fails silently: if the gap is still above ``tol`` after
    ``max_iter`` passes the solution is returned with ``converged=False``.
    """
    w = validate_gradient_matrix(w)
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = w.shape[0]
    if max_iter is None:
        max_iter = 100 * m
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    gram = np.ascontiguousarray(w @ w.T)
    lam, gap, iters, converged = accel.fw_min_norm(gram, float(tol), int(max_iter))
    combined = w.T @ lam
    return MinNormSolution(
        weights=lam,
        combined=combined,
        descent_direction=-combined,
        dual_norm_sq=float(lam @ gram @ lam),
        gap=float(gap),
        iterations=int(iters),
        converged=bool(converged),
    )


def min_norm_2obj_oracle(g1, g2) -> np.ndarray:
    """Closed-form simplex weights for the two-row case.

    ``lam1 = clip(((g2-g1).g2) / |g1-g2|^2, 0, 1)``; identical rows return
    ``(1, 0)`` by convention.
    """
    g1 = np.asarray(g1, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    if g1.shape != g2.shape:
        raise ValueError(f"rows must have equal length, got {g1.shape} and {g2.shape}")
    diff = g1 - g2
    denom = float(diff @ diff)
    if denom == 0.0:
        return np.array([1.0, 0.0])
    lam1 = float(np.clip(((g2 - g1) @ g2) / denom, 0.0, 1.0))
    return np.array([lam1, 1.0 - lam1])


def simplex_grid_oracle(w, resolution: int = 500) -> np.ndarray:
    """Brute-force grid minimizer of ``|W' lam|^2`` over the simplex (M<=3)."""
    w = validate_gradient_matrix(w)
    if resolution < 10:
        raise ValueError("resolution must be >= 10")
    m = w.shape[0]
    if m == 2:
        t = np.arange(resolution + 1) / resolution
        lams = np.stack([t, 1.0 - t], axis=1)
    elif m == 3:
        i, j = np.meshgrid(np.arange(resolution + 1), np.arange(resolution + 1), indexing="ij")
        keep = (i + j) <= resolution
        a = i[keep] / resolution
        b = j[keep] / resolution
        lams = np.stack([a, b, 1.0 - a - b], axis=1)
    else:
        raise ValueError(f"grid oracle supports M in (2, 3), got M={m}")
    objs = np.einsum("ij,ij->i", lams @ w, lams @ w)
    return lams[int(np.argmin(objs))]


def criticality_measure(problem, x, tol: float = 1e-10) -> float:
    """``|grad_F(x)' lam*(x)|`` from the exact Jacobian; zero iff Pareto critical."""
    jac = problem.full_jacobian(np.asarray(x, dtype=np.float64))
    sol = solve_min_norm(jac, tol=tol)
    return float(np.linalg.norm(sol.combined))
