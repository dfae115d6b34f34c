import numpy as np
import pytest

from moograd import accel
from moograd.minnorm import (
    criticality_measure,
    min_norm_2obj_oracle,
    simplex_grid_oracle,
    solve_min_norm,
)
from moograd.problems import QuadraticPair


def test_symmetric_unit_axes():
    sol = solve_min_norm(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(sol.weights, [0.5, 0.5], atol=1e-10)
    assert sol.dual_norm_sq == pytest.approx(0.5, abs=1e-10)
    assert np.array_equal(sol.descent_direction, -sol.combined)


def test_identical_rows():
    g = np.array([0.3, -1.2, 0.7])
    sol = solve_min_norm(np.stack([g, g]))
    assert np.allclose(sol.combined, g)
    assert sol.dual_norm_sq == pytest.approx(float(g @ g))


def test_pareto_critical_opposed_rows():
    sol = solve_min_norm(np.array([[2.0, 0.0], [-1.0, 0.0]]))
    assert np.allclose(sol.weights, [1 / 3, 2 / 3], atol=1e-8)
    assert np.allclose(sol.combined, 0.0, atol=1e-10)
    assert np.allclose(sol.descent_direction, 0.0, atol=1e-10)


def test_not_converged_flag_instead_of_silent_failure():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(5, 4))
    sol = solve_min_norm(w, tol=1e-16, max_iter=1)
    assert not sol.converged
    assert sol.iterations == 1


def test_rejects_bad_matrices():
    with pytest.raises(ValueError, match="M >= 2"):
        solve_min_norm(np.ones((1, 3)))
    with pytest.raises(ValueError, match="non-finite"):
        solve_min_norm(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="tol"):
        solve_min_norm(np.eye(2), tol=0.0)


def brute_force_lambda1(g1, g2, points=10**6):
    """Dense 1-D scan of |lam g1 + (1-lam) g2|^2, independent of the oracle."""
    lam = np.linspace(0.0, 1.0, points)
    combos = lam[:, None] * g1 + (1 - lam)[:, None] * g2
    return lam[np.argmin(np.einsum("ij,ij->i", combos, combos))]


def test_2obj_oracle_against_dense_scan():
    g1, g2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert min_norm_2obj_oracle(g1, g2)[0] == pytest.approx(brute_force_lambda1(g1, g2), abs=1e-5)
    g1, g2 = np.array([2.0, 0.0]), np.array([-1.0, 0.0])
    assert min_norm_2obj_oracle(g1, g2)[0] == pytest.approx(1 / 3, abs=1e-9)
    assert min_norm_2obj_oracle(g1, g2)[0] == pytest.approx(brute_force_lambda1(g1, g2), abs=1e-5)


def test_2obj_oracle_degenerate_convention():
    g = np.array([0.5, 0.5])
    assert np.array_equal(min_norm_2obj_oracle(g, g), [1.0, 0.0])


def test_grid_oracle():
    w = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(simplex_grid_oracle(w, 1000), [0.5, 0.5], atol=1e-3)
    lam3 = simplex_grid_oracle(np.eye(3), 300)
    assert np.allclose(lam3, [1 / 3, 1 / 3, 1 / 3], atol=1 / 300 + 1e-12)
    w0 = np.array([[0.0, 0.0], [5.0, 5.0]])
    assert np.array_equal(simplex_grid_oracle(w0, 100), [1.0, 0.0])
    with pytest.raises(ValueError, match="M in"):
        simplex_grid_oracle(np.eye(4), 100)


def test_fw_matches_2obj_oracle_bulk():
    rng = np.random.default_rng(42)
    for _ in range(300):
        n = rng.integers(1, 11)
        w = rng.uniform(-1, 1, size=(2, n))
        sol = solve_min_norm(w)
        lam = min_norm_2obj_oracle(w[0], w[1])
        obj_oracle = float(np.sum((w.T @ lam) ** 2))
        assert abs(sol.dual_norm_sq - obj_oracle) <= 1e-9


def test_descent_property():
    rng = np.random.default_rng(7)
    tol = 1e-10
    for _ in range(200):
        w = rng.normal(size=(rng.integers(2, 6), rng.integers(1, 8)))
        sol = solve_min_norm(w, tol=tol)
        if not sol.converged:
            continue
        slack = -sol.dual_norm_sq + 10 * tol
        assert np.all(w @ sol.descent_direction <= slack + 1e-15)


def test_holder_continuity_two_objectives():
    rng = np.random.default_rng(11)
    for _ in range(500):
        n = rng.integers(1, 9)
        w = rng.uniform(-1, 1, size=(2, n))
        if rng.random() < 0.5:
            v = w + rng.uniform(-1, 1, size=w.shape) * 10.0 ** rng.integers(-6, 0)
        else:
            v = rng.uniform(-1, 1, size=(2, n))
        c = max(np.linalg.norm(w), np.linalg.norm(v))
        dw = w.T @ min_norm_2obj_oracle(w[0], w[1])
        dv = v.T @ min_norm_2obj_oracle(v[0], v[1])
        bound = np.sqrt(2 * c) * np.linalg.norm(w - v) ** 0.5 + 1e-8
        assert np.linalg.norm(dw - dv) <= bound


def test_criticality_on_quadratic_pair():
    c1, c2 = np.zeros(3), np.array([1.0, 1.0, 0.0])
    prob = QuadraticPair(c1, c2)
    assert criticality_measure(prob, (c1 + c2) / 2) == pytest.approx(0.0, abs=1e-8)
    assert criticality_measure(prob, c1) == pytest.approx(0.0, abs=1e-8)
    off = (c1 + c2) / 2 + np.array([0.0, 0.0, 0.5])
    assert criticality_measure(prob, off) > 0.01


def test_criticality_zero_iff_origin_in_hull():
    rng = np.random.default_rng(3)
    for _ in range(100):
        w = rng.uniform(-1, 1, size=(2, 3))
        sol = solve_min_norm(w)
        lam = simplex_grid_oracle(w, 2000)
        hull_min = np.linalg.norm(w.T @ lam)
        assert (np.sqrt(sol.dual_norm_sq) < 1e-6) == (hull_min < 1e-3)


def test_jit_and_python_kernels_agree():
    rng = np.random.default_rng(5)
    for _ in range(50):
        w = rng.normal(size=(rng.integers(2, 7), 5))
        gram = np.ascontiguousarray(w @ w.T)
        lam_a, gap_a, it_a, conv_a = accel.fw_min_norm(gram, 1e-10, 700)
        lam_b, gap_b, it_b, conv_b = accel.fw_min_norm_py(gram, 1e-10, 700)
        assert np.array_equal(lam_a, lam_b)
        assert gap_a == gap_b and it_a == it_b and conv_a == conv_b
