import os
import subprocess
import sys

import numpy as np

from moograd import accel


def test_env_flag_disables_numba():
    env = dict(os.environ, MOOGRAD_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from moograd import accel; print(accel.NUMBA_ENABLED)"],
        capture_output=True,
        text=True,
        env=env,
    )
    assert out.stdout.strip() == "False"


def test_fallback_matches_active_path():
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = rng.normal(size=(3, 6))
        gram = np.ascontiguousarray(w @ w.T)
        a = accel.fw_min_norm(gram, 1e-10, 300)
        b = accel.fw_min_norm_py(gram, 1e-10, 300)
        assert np.array_equal(a[0], b[0]) and a[1:] == b[1:]
    pts = np.ascontiguousarray(rng.uniform(size=(80, 3)))
    assert np.array_equal(accel.nondominated_mask(pts), accel.nondominated_mask_py(pts))


def test_nondominated_mask_basics():
    pts = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    mask = accel.nondominated_mask_py(pts)
    assert mask.tolist() == [True, True, False, True]
