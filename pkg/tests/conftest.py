import numpy as np
import pytest

from glth import nn


def central_difference(f, w, idx, eps=1e-4):
    """Central finite difference of scalar ``f`` at ``w`` along coordinates ``idx``."""
    out = []
    for i in idx:
        wp, wm = w.copy(), w.copy()
        wp[i] += eps
        wm[i] -= eps
        out.append((f(wp) - f(wm)) / (2 * eps))
    return np.array(out)


def max_relative_error(spec, w, x, y, coords):
    _, grad = nn.loss_and_grad(spec, w, x, y)
    numeric = central_difference(lambda v: nn.loss_and_grad(spec, v, x, y)[0], w, coords)
    denom = np.maximum(np.maximum(np.abs(numeric), np.abs(grad[coords])), 1e-8)
    return float(np.max(np.abs(numeric - grad[coords]) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_mlp():
    return nn.mlp((1, 1, 6), hidden=(5,), classes=3)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for the acceptance summary, then assert."""

    def _verdict(name, ok, detail):
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return _verdict


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
