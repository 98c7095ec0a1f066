import os

import numpy as np
import pytest

# long learning runs are skipped when AUTORL_FAST=1
FAST = os.environ.get("AUTORL_FAST") == "1"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_difference(f, params, h=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. the array ``params`` (mutated in place)."""
    grad = np.zeros_like(params)
    for i in range(params.size):
        old = params.flat[i]
        params.flat[i] = old + h
        up = f()
        params.flat[i] = old - h
        down = f()
        params.flat[i] = old
        grad.flat[i] = (up - down) / (2 * h)
    return grad


def assert_relclose(a, b, rel, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    err = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    assert err.max() <= rel, f"max relative error {err.max():.3g} > {rel}"


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
