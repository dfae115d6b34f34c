import numpy as np
import pytest

from moograd.metrics import (
    MonitorSeries,
    ObjectivePoint,
    dominates,
    extract_front,
    front_reference,
    hypervolume_2d,
    hypervolume_3d,
    theorem_monitor,
)
from moograd.optimizers import OptimizerState, StepSchedule, mgda_step, run_steps
from moograd.problems import QuadraticPair, make_quadratic_pair
from moograd.trace import RunRecord, StepRow


def test_dominates_basics():
    assert dominates([1, 1], [2, 2])
    assert not dominates([1, 2], [2, 1])
    assert not dominates([1, 1], [1, 1])
    assert dominates([1, 1], [1, 2])


def brute_front(values):
    keep = []
    for i, a in enumerate(values):
        if not any(dominates(b, a) for j, b in enumerate(values) if j != i):
            keep.append(i)
    return keep


def test_extract_front_small_cases():
    same = np.tile([1.0, 2.0], (5, 1))
    assert len(extract_front(same)) == 5
    line = np.array([[t, 1 - t] for t in np.linspace(0, 1, 9)])
    assert len(extract_front(line)) == 9


def test_extract_front_matches_bruteforce_and_is_stable():
    rng = np.random.default_rng(0)
    vals = rng.uniform(0, 1, size=(200, 2))
    front = extract_front(vals)
    expected = vals[brute_front(vals)]
    assert np.array_equal(front, expected)
    pts = [ObjectivePoint(v, i) for i, v in enumerate(vals)]
    fr_pts = extract_front(pts)
    assert [p.source for p in fr_pts] == brute_front(vals)


def test_extract_front_idempotent():
    rng = np.random.default_rng(1)
    vals = rng.uniform(0, 1, size=(150, 3))
    once = extract_front(vals)
    twice = extract_front(once)
    assert np.array_equal(once, twice)


def test_hypervolume_2d_cases():
    assert hypervolume_2d(np.array([[0.0, 0.0]]), [1.0, 1.0]) == pytest.approx(1.0)
    assert hypervolume_2d(np.array([[0.0, 1.0], [1.0, 0.0]]), [2.0, 2.0]) == pytest.approx(3.0)
    assert hypervolume_2d(np.empty((0, 2)), [1.0, 1.0]) == 0.0
    with pytest.raises(ValueError, match="dominate"):
        hypervolume_2d(np.array([[2.0, 0.0]]), [1.0, 1.0])


def mc_hypervolume(values, ref, n=400_000, seed=0):
    rng = np.random.default_rng(seed)
    lo = values.min(axis=0)
    pts = rng.uniform(lo, ref, size=(n, values.shape[1]))
    covered = np.zeros(n, dtype=bool)
    for v in values:
        covered |= np.all(pts >= v, axis=1)
    return covered.mean() * np.prod(ref - lo)


def test_hypervolume_2d_matches_monte_carlo():
    rng = np.random.default_rng(3)
    vals = extract_front(rng.uniform(0, 1, size=(40, 2)))
    ref = np.array([2.0, 2.0])
    exact = hypervolume_2d(vals, ref)
    approx = mc_hypervolume(np.asarray(vals), ref)
    assert exact == pytest.approx(approx, rel=0.02)


def test_hypervolume_3d_matches_monte_carlo():
    rng = np.random.default_rng(4)
    vals = extract_front(rng.uniform(0, 1, size=(30, 3)))
    ref = np.array([1.5, 1.5, 1.5])
    exact = hypervolume_3d(vals, ref)
    approx = mc_hypervolume(np.asarray(vals), ref)
    assert exact == pytest.approx(approx, rel=0.03)


def test_hypervolume_monotone_under_nondominated_addition():
    rng = np.random.default_rng(5)
    vals = extract_front(rng.uniform(0.2, 1, size=(20, 2)))
    ref = np.array([2.0, 2.0])
    base = hypervolume_2d(vals, ref)
    extra = np.vstack([vals, [[0.05, 0.05]]])
    assert hypervolume_2d(extract_front(extra), ref) >= base


def test_front_reference_margin():
    a = np.array([[0.0, 1.0]])
    b = np.array([[1.0, 0.0]])
    ref = front_reference(a, b)
    assert np.all(ref > 1.0)


def test_theorem_monitor_empty_and_critical():
    prob = QuadraticPair([0.0, 0.0], [1.0, 0.0])
    empty = theorem_monitor(RunRecord(), prob)
    assert len(empty) == 0
    # run stuck at a Pareto critical point
    x = np.array([0.5, 0.0])
    rec = RunRecord(
        rows=[StepRow(k=i + 1, losses=prob.eval(x), direction_norm=0.0, alpha=0.1) for i in range(3)],
        iterates=[x.copy() for _ in range(4)],
    )
    series = theorem_monitor(rec, prob)
    assert np.allclose(series.criticality_sq, 0.0, atol=1e-16)
    assert np.allclose(series.partial_sums, 0.0, atol=1e-16)


def test_theorem_monitor_partial_sums_nondecreasing():
    prob = make_quadratic_pair(4, seed=2)
    x0 = prob.initial_point(np.random.default_rng(0))
    sched = StepSchedule("harmonic")
    rec = run_steps(prob, lambda st, r: mgda_step(prob, st, sched), x0, 50, np.random.default_rng(0))
    series = theorem_monitor(rec, prob)
    assert len(series) == 50
    assert np.all(np.diff(series.partial_sums) >= -1e-18)
