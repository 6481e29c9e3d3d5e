from __future__ import annotations

import itertools

import numpy as np
import pytest

from robusthedge.config import DEFAULT_GRID
from robusthedge.marginals import DiscreteMeasure, build_unbounded_pair
from robusthedge.models import BsParams, MjdParams, quote_surface

T1, T = 0.5, 1.0
BS = BsParams(1.0, 0.2, 0.0)
MJD = MjdParams(1.0, 0.14, 0.0, 2.0, -0.1, 0.13)


def random_martingale_pair(rng: np.random.Generator, n1: int, spread: int = 2) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """mu on n1 atoms and nu obtained by splitting each atom into a mean-preserving fan.

    Atoms live on a lattice of step 1/8 so the fans of different x-atoms share
    y-atoms often, which is what makes the coupling set nontrivial.
    """
    x = np.sort(rng.choice(np.arange(8, 25), size=n1, replace=False)) / 8.0
    alpha = rng.dirichlet(np.ones(n1))
    ys: dict[float, float] = {}
    for xi, ai in zip(x, alpha):
        d = rng.integers(1, 6, size=spread) / 8.0
        # two-point fan x - d0, x + d1 with masses making the mean exactly xi
        lo, hi = xi - d[0], xi + d[1]
        q = d[1] / (d[0] + d[1])
        for yv, m in ((lo, ai * q), (hi, ai * (1 - q))):
            ys[yv] = ys.get(yv, 0.0) + m
    y = np.array(sorted(ys))
    beta = np.array([ys[v] for v in y])
    mu = DiscreteMeasure(x, alpha)
    return mu, DiscreteMeasure(y, beta / beta.sum())


def random_square_pair(rng: np.random.Generator, n: int = 4) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """n x-atoms and n y-atoms in convex order, built from a random martingale kernel."""
    x = np.sort(rng.uniform(0.7, 1.3, n))
    y = np.sort(np.concatenate([[rng.uniform(0.1, 0.6)], rng.uniform(0.6, 1.6, n - 2), [rng.uniform(1.6, 2.5)]]))
    alpha = rng.dirichlet(np.ones(n))
    beta = np.zeros(n)
    for xi, ai in zip(x, alpha):
        q = rng.dirichlet(np.ones(n))
        m = q @ y
        # mix with the extreme atom on the far side so the row mean is exactly xi
        end = 0 if m > xi else n - 1
        t = (xi - y[end]) / (m - y[end])
        q = t * q
        q[end] += 1.0 - t
        beta += ai * q
    return DiscreteMeasure(x, alpha), DiscreteMeasure(y, beta / beta.sum())


def polytope_vertices(A: np.ndarray, b: np.ndarray) -> list[np.ndarray]:
    """All vertices of {p >= 0 : A p = b} by basis enumeration (tiny instances only)."""
    m, n = A.shape
    rank = np.linalg.matrix_rank(A)
    # keep a maximal independent row subset
    rows: list[int] = []
    for i in range(m):
        if np.linalg.matrix_rank(A[rows + [i]]) > len(rows):
            rows.append(i)
    A, b = A[rows], b[rows]
    out: list[np.ndarray] = []
    for cols in itertools.combinations(range(n), rank):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xb = np.linalg.solve(B, b)
        if xb.min() < -1e-11:
            continue
        p = np.zeros(n)
        p[list(cols)] = np.maximum(xb, 0.0)
        if not any(np.allclose(p, q, atol=1e-12) for q in out):
            out.append(p)
    return out


@pytest.fixture(scope="session")
def bs_marginals() -> tuple[DiscreteMeasure, DiscreteMeasure]:
    return build_unbounded_pair(quote_surface(BS, DEFAULT_GRID, T1, T))


@pytest.fixture(scope="session")
def mjd_marginals() -> tuple[DiscreteMeasure, DiscreteMeasure]:
    return build_unbounded_pair(quote_surface(MJD, DEFAULT_GRID, T1, T))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
