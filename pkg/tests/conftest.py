import numpy as np
import pytest


def naive_conv2d(x, w, stride=1, padding=0):
    """Loop-level reference: every output is an explicit patch-vector dot product."""
    n, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.zeros((n, c_in, h + 2 * padding, wd + 2 * padding), dtype=x.dtype)
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, ho, wo), dtype=x.dtype)
    for b in range(n):
        for co in range(c_out):
            filt = w[co].reshape(-1)
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[b, co, i, j] = float(np.dot(filt, patch.reshape(-1)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for the end-of-run acceptance summary."""
    def record(number, ok, title, detail):
        ACCEPTANCE_LINES.append((number, f"{'PASS' if ok else 'FAIL'}  [{number:>2}] {title}: {detail}"))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
