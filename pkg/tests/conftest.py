import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def naive_dft(u):
    """O(n^2) direct-summation DFT over the two grid axes of an (H, W, C) array."""
    h, w, c = u.shape
    out = np.zeros((h, w, c), dtype=complex)
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    for ky in range(h):
        for kx in range(w):
            phase = np.exp(-2j * np.pi * (ky * ys / h + kx * xs / w))
            for ch in range(c):
                out[ky, kx, ch] = np.sum(u[:, :, ch] * phase)
    return out


def centered(k, n):
    return k if k < n // 2 else k - n


def brute_band(ky, kx, h, w):
    """Fine band of bin (ky, kx) from its signed centred frequencies, by integer search."""
    fy, fx = centered(ky, h), centered(kx, w)
    r2 = fy * fy + fx * fx
    b = 0
    while (b + 1) ** 2 <= r2:
        b += 1
    return b


def finite_difference(f, x, h=1e-5):
    """Central differences of scalar f at every entry of x."""
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-4):
    # per-entry relative check with a floor far below typical entry size
    floor = 1e-8 * np.max(np.abs(analytic))
    err = np.abs(analytic - numeric)
    assert np.all(err <= rtol * np.abs(analytic) + floor), np.max(err / (np.abs(analytic) + floor))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
