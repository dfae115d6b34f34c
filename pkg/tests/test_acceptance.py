"""Acceptance criteria, one test per criterion.

Each test prints its pass/fail line and asserts it. Checkpoint training
artifacts are shared across tests through a session-scoped context, so the
learned-optimizer criteria train their models once.
"""

import time

import pytest

from moograd.checks import CHECKS, CheckContext


@pytest.fixture(scope="session")
def ctx(tmp_path_factory):
    context = CheckContext(str(tmp_path_factory.mktemp("acceptance")))
    yield context


@pytest.mark.parametrize("number,name,fn", CHECKS, ids=[f"criterion_{n:02d}_{name.replace(' ', '_')}" for n, name, _ in CHECKS])
def test_acceptance_criterion(number, name, fn, ctx):
    t0 = time.perf_counter()
    passed, detail = fn(ctx)
    status = "PASS" if passed else "FAIL"
    print(f"[{status}] criterion {number:>2} ({name}): {detail} [{time.perf_counter() - t0:.1f}s]")
    assert passed, f"criterion {number} ({name}): {detail}"
