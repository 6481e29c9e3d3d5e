from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robusthedge.lp import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    LpProblem,
    Simplex,
    ToleranceSet,
    dump_problem_csv,
    solve,
)


def test_min_with_lower_row():
    sol = solve(LpProblem([1.0], [[1.0]], [1.0], [">="]))
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(1.0)
    assert sol.objective == pytest.approx(1.0)
    assert sol.duals[0] == pytest.approx(1.0)


def test_unbounded():
    assert solve(LpProblem([1.0], [[1.0]], [1.0], [">="], sense="max")).status == UNBOUNDED


def test_infeasible():
    sol = solve(LpProblem([1.0, 1.0], [[1.0, 1.0], [1.0, 1.0]], [1.0, 3.0], ["<=", ">="]))
    assert sol.status == INFEASIBLE


def test_unique_martingale_coupling():
    # mu = delta_1, nu = (delta_0.5 + delta_1.5) / 2, cost |y - x|
    y = np.array([0.5, 1.5])
    A = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0], y - 1.0])
    b = np.array([1.0, 0.5, 0.5, 0.0])
    sol = solve(LpProblem(np.abs(y - 1.0), A, b, ["="] * 4, sense="max"))
    assert sol.objective == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-12)


def test_bad_relation_rejected():
    with pytest.raises(ValueError):
        LpProblem([1.0], [[1.0]], [1.0], ["<"])


def test_free_and_boxed_variables():
    # min x0 - x1 with x0 free, x1 in [0, 2], x0 >= -3 via a row
    p = LpProblem([1.0, -1.0], [[1.0, 0.0]], [-3.0], [">="], lower=[-np.inf, 0.0], upper=[np.inf, 2.0])
    sol = solve(p)
    np.testing.assert_allclose(sol.x, [-3.0, 2.0], atol=1e-12)
    assert sol.objective == pytest.approx(-5.0)


def random_lp(rng: np.random.Generator, m: int, n: int) -> LpProblem:
    """Feasible, bounded: a known feasible point and nonnegative costs for min."""
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(0.0, 2.0, n)
    rel = list(rng.choice(["<=", "=", ">="], size=m, p=[0.4, 0.2, 0.4]))
    slack = rng.uniform(0.0, 1.0, m)
    b = A @ x0 + np.array([{"<=": s, "=": 0.0, ">=": -s}[r] for r, s in zip(rel, slack)])
    return LpProblem(rng.uniform(0.1, 2.0, n), A, b, rel)


def vertex_optimum(p: LpProblem) -> float:
    """Best objective over all basic feasible points of {rows, x >= 0}."""
    m, n = p.A.shape
    G = np.vstack([p.A, np.eye(n)])
    h = np.concatenate([p.b, np.zeros(n)])
    best = np.inf
    for act in itertools.combinations(range(m + n), n):
        M = G[list(act)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(act)])
        r = p.A @ x - p.b
        ok = np.all(x >= -1e-9)
        for i, rel in enumerate(p.relations):
            ok &= {"<=": r[i] <= 1e-9, "=": abs(r[i]) <= 1e-9, ">=": r[i] >= -1e-9}[rel]
        if ok:
            best = min(best, float(p.c @ x))
    return best


def explicit_dual(p: LpProblem) -> LpProblem:
    """max b'y s.t. A'y <= c with sign(y_i) fixed by the row relation."""
    lower = np.array([{"<=": -np.inf, "=": -np.inf, ">=": 0.0}[r] for r in p.relations])
    upper = np.array([{"<=": 0.0, "=": np.inf, ">=": np.inf}[r] for r in p.relations])
    return LpProblem(p.b, p.A.T, p.c, ["<="] * p.A.shape[1], sense="max", lower=lower, upper=upper)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 5), st.integers(1, 6))
def test_random_lp_against_vertices_and_dual(seed, m, n):
    p = random_lp(np.random.default_rng(seed), m, n)
    sol = solve(p)
    assert sol.status == OPTIMAL
    scale = 1.0 + abs(sol.objective)
    assert sol.objective == pytest.approx(vertex_optimum(p), abs=1e-8 * scale)
    # strong duality and complementary slackness from the reported multipliers
    assert abs(sol.objective - p.b @ sol.duals) <= 1e-8 * scale
    assert np.all(np.abs(sol.duals * (p.A @ sol.x - p.b)) <= 1e-8 * scale)
    dual = solve(explicit_dual(p))
    assert dual.status == OPTIMAL
    assert dual.objective == pytest.approx(sol.objective, abs=1e-8 * scale)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_degenerate_transport_lps(seed):
    # transport problems are highly degenerate; check the dual certificate
    rng = np.random.default_rng(seed)
    n1, n2 = rng.integers(2, 7, size=2)
    a = rng.integers(1, 4, n1).astype(float)
    b = rng.integers(1, 4, n2).astype(float)
    b *= a.sum() / b.sum()
    A = np.zeros((n1 + n2, n1 * n2))
    for i in range(n1):
        A[i, i * n2 : (i + 1) * n2] = 1.0
    for j in range(n2):
        A[n1 + j, j::n2] = 1.0
    c = rng.integers(0, 3, n1 * n2).astype(float)
    p = LpProblem(c, A, np.concatenate([a, b]), ["="] * (n1 + n2))
    sol = solve(p)
    assert sol.optimal
    assert np.max(np.abs(A @ sol.x - p.b)) <= 1e-8
    assert np.all(c - A.T @ sol.duals >= -1e-8)
    assert sol.objective == pytest.approx(p.b @ sol.duals, abs=1e-8)


def test_deterministic():
    p = random_lp(np.random.default_rng(1), 4, 6)
    s1, s2 = solve(p), solve(p)
    np.testing.assert_array_equal(s1.x, s2.x)
    np.testing.assert_array_equal(s1.duals, s2.duals)


def test_highs_backend_agrees():
    p = random_lp(np.random.default_rng(2), 4, 6)
    a, b = solve(p), solve(p, backend="highs")
    assert a.objective == pytest.approx(b.objective, abs=1e-9)
    assert p.b @ b.duals == pytest.approx(b.objective, abs=1e-8)


def test_reoptimize_warm_start():
    p = random_lp(np.random.default_rng(3), 3, 5)
    s = Simplex(p, ToleranceSet())
    s.solve()
    c2 = np.random.default_rng(4).uniform(0.1, 2.0, 5)
    warm = s.reoptimize(c2)
    cold = solve(LpProblem(c2, p.A, p.b, p.relations))
    assert warm.objective == pytest.approx(cold.objective, abs=1e-9)


def test_dump_has_blocks():
    text = dump_problem_csv(random_lp(np.random.default_rng(5), 2, 3))
    for block in ("# costs", "# matrix", "# rhs"):
        assert block in text
