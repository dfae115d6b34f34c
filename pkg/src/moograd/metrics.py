"""Pareto-front extraction, front quality metrics and convergence monitors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import accel
from .minnorm import criticality_measure
from .trace import RunRecord


@dataclass
class ObjectivePoint:
    values: np.ndarray
    source: int | str | None = None


@dataclass
class MonitorSeries:
    """Weighted criticality series: term k is alpha_k * |grad F(x_k)' lam*|^2."""

    ks: np.ndarray
    alphas: np.ndarray
    criticality_sq: np.ndarray
    partial_sums: np.ndarray

    def __len__(self) -> int:
        return self.ks.size


def dominates(a, b) -> bool:
    """True iff a <= b componentwise with at least one strict inequality."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"points must share a shape, got {a.shape} and {b.shape}")
    return bool(np.all(a <= b) and np.any(a < b))


def _as_value_matrix(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        return np.asarray(points, dtype=np.float64)
    return np.asarray([np.asarray(p.values, dtype=np.float64) for p in points])


def extract_front(points):
    """Return exactly the points not dominated by any other, in input order."""
    if len(points) == 0:
        return points[:0] if isinstance(points, np.ndarray) else []
    values = _as_value_matrix(points)
    mask = accel.nondominated_mask(np.ascontiguousarray(values))
    if isinstance(points, np.ndarray):
        return points[mask]
    return [p for p, keep in zip(points, mask) if keep]


def hypervolume_2d(front, reference) -> float:
    """Area dominated by a 2-objective front relative to ``reference``."""
    reference = np.asarray(reference, dtype=np.float64)
    if reference.shape != (2,):
        raise ValueError("reference must be a length-2 point")
    values = _as_value_matrix(front)
    if values.size == 0:
        return 0.0
    if values.shape[1] != 2:
        raise ValueError("hypervolume_2d expects 2-objective points")
    for row in values:
        if not dominates(row, reference):
            raise ValueError(f"front point {row} does not dominate reference {reference}")
    order = np.lexsort((values[:, 1], values[:, 0]))
    values = values[order]
    hv = 0.0
    ceiling = reference[1]
    for x, y in values:
        if y < ceiling:
            hv += (reference[0] - x) * (ceiling - y)
            ceiling = y
    return float(hv)


def hypervolume_3d(front, reference) -> float:
    """Exact 3-objective hypervolume via a sweep over the third coordinate."""
    reference = np.asarray(reference, dtype=np.float64)
    values = _as_value_matrix(front)
    if values.size == 0:
        return 0.0
    if values.shape[1] != 3 or reference.shape != (3,):
        raise ValueError("hypervolume_3d expects 3-objective points and reference")
    for row in values:
        if not dominates(row, reference):
            raise ValueError(f"front point {row} does not dominate reference {reference}")
    zs = np.unique(values[:, 2])
    bounds = np.append(zs, reference[2])
    hv = 0.0
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi <= lo:
            continue
        active = values[values[:, 2] <= lo][:, :2]
        active = extract_front(active)
        hv += hypervolume_2d(active, reference[:2]) * (hi - lo)
    return float(hv)


def front_reference(*fronts, margin: float = 0.1) -> np.ndarray:
    """Componentwise max over all fronts, pushed out by a relative margin."""
    stacked = np.vstack([_as_value_matrix(f) for f in fronts if len(f)])
    top = stacked.max(axis=0)
    span = top - stacked.min(axis=0)
    return top + margin * np.maximum(span, 1e-12)


def theorem_monitor(run: RunRecord, problem, tol: float = 1e-10) -> MonitorSeries:
    """Recompute exact criticality along a recorded run and accumulate
    the step-size-weighted partial sums (the quantity the convergence
    results bound)."""
    if not run.rows:
        return MonitorSeries(np.array([], dtype=int), np.array([]), np.array([]), np.array([]))
    if len(run.iterates) != len(run.rows) + 1:
        raise ValueError("run must carry its iterate sequence for monitoring")
    ks = np.array([row.k for row in run.rows])
    alphas = np.array([row.alpha for row in run.rows])
    crit_sq = np.empty(len(run.rows))
    for i, row in enumerate(run.rows):
        crit = criticality_measure(problem, run.iterates[i], tol=tol)
        crit_sq[i] = crit * crit
    return MonitorSeries(ks, alphas, crit_sq, np.cumsum(alphas * crit_sq))
