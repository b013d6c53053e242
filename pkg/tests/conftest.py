import numpy as np
import pytest

from gibbs_ldp.torus import Configuration, TorusWindow


def window_with_side(side, d=2, lam=1.0):
    """Window whose side equals ``side`` for an integral point budget."""
    n = round(lam * side**d)
    w = TorusWindow(d, lam, n)
    assert abs(w.side - side) < 1e-9
    return w


def brute_dist2(pts, side):
    diff = pts[:, None, :] - pts[None, :, :]
    diff -= side * np.round(diff / side)
    return (diff**2).sum(-1)


@pytest.fixture
def w10():
    return window_with_side(10.0)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


def config(w, pts):
    return Configuration(w, np.asarray(pts, dtype=float).reshape(-1, w.dim))


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion; returns the verdict for asserting."""

    def _report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
