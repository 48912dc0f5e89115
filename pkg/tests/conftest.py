import numpy as np
import pytest

from fpkrylov.grid import DiffusionParams, make_grid

ACCEPTANCE_LINES = []


def dense_oracle(m_tilde, m_prev, g, dt, h, drift=None):
    """Dense A and b placed entry by entry from the stencil formulas.

    Pure loops over 1-based (i, j); values outside the grid read as zero.
    ``drift`` is an array (W, H, 2) or None.
    """
    W, H = m_tilde.shape
    n = W * H

    def mt(i, j):
        return m_tilde[i - 1, j - 1] if 1 <= i <= W and 1 <= j <= H else 0.0

    def f(i, j, c):
        if drift is None or not (1 <= i <= W and 1 <= j <= H):
            return 0.0
        return drift[i - 1, j - 1, c]

    A = np.zeros((n, n))
    b = np.zeros(n)
    g2 = g * g
    for i in range(1, W + 1):
        for j in range(1, H + 1):
            row = (i - 1) * H + (j - 1)
            dx = mt(i + 1, j) - mt(i - 1, j)
            dy = mt(i, j + 1) - mt(i, j - 1)
            c_diag = 1 / dt + 2 * g2 / h**2
            c_north = -g2 / (2 * h**2) + f(i, j, 1) / (2 * h) - g2 / (8 * h**2) * dy
            c_south = -g2 / (2 * h**2) - f(i, j, 1) / (2 * h) + g2 / (8 * h**2) * dy
            c_east = -g2 / (2 * h**2) + f(i, j, 0) / (2 * h) - g2 / (8 * h**2) * dx
            c_west = -g2 / (2 * h**2) - f(i, j, 0) / (2 * h) + g2 / (8 * h**2) * dx
            A[row, row] = c_diag
            if j < H:
                A[row, row + 1] = c_north
            if j > 1:
                A[row, row - 1] = c_south
            if i < W:
                A[row, row + H] = c_east
            if i > 1:
                A[row, row - H] = c_west
            b[row] = m_prev[i - 1, j - 1] / dt - (
                (f(i + 1, j, 0) - f(i - 1, j, 0)) + (f(i, j + 1, 1) - f(i, j - 1, 1))
            ) / (2 * h)
    return A, b


def gauss_solve(A, b):
    """Textbook Gaussian elimination with partial pivoting (dense oracle)."""
    A = np.array(A, dtype=float)
    x = np.array(b, dtype=float)
    n = len(x)
    for k in range(n):
        p = k + np.argmax(np.abs(A[k:, k]))
        A[[k, p]], x[[k, p]] = A[[p, k]], x[[p, k]]
        for r in range(k + 1, n):
            l = A[r, k] / A[k, k]
            A[r, k:] -= l * A[k, k:]
            x[r] -= l * x[k]
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - A[k, k + 1:] @ x[k + 1:]) / A[k, k]
    return x


def smooth_field(H, rng, scale=1.0):
    """Random smooth log-density-like field on an H x H grid."""
    ii, jj = np.meshgrid(np.arange(H), np.arange(H), indexing="ij")
    ci, cj = rng.uniform(0, H, 2)
    w = rng.uniform(H / 6, H / 2)
    return -scale * (0.3 + ((ii - ci) ** 2 + (jj - cj) ** 2) / (2 * w * w))


@pytest.fixture
def default_params():
    return DiffusionParams(g=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid8():
    return make_grid(8, 8, 100)


@pytest.fixture
def acceptance():
    def record(name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
