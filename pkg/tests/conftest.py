import numpy as np
import pytest


def random_cell(rng, shape=(16, 16), p=0.5):
    """Random two-phase cell (retries until both phases are present)."""
    while True:
        cell = (rng.random(shape) < p).astype(np.uint8)
        if 0 < cell.sum() < cell.size:
            return cell


def cross_cell(n=64, half_width=None):
    hw = n // 8 if half_width is None else half_width
    c = np.zeros((n, n), dtype=np.uint8)
    mid = n // 2
    c[mid - hw:mid + hw, :] = 1
    c[:, mid - hw:mid + hw] = 1
    return c


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, filled by tests/test_acceptance.py: number -> (title, passed, detail)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[n]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {n:2d}. {title}: {detail}")
