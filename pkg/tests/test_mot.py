from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import T1, T, random_martingale_pair
from robusthedge import payoffs
from robusthedge.marginals import DiscreteMeasure
from robusthedge.mot import (
    CouplingPolytope,
    MotInfeasible,
    decompose_pwl,
    dual_potentials,
    price_bounds,
    super_hedge,
    write_coupling_csv,
    write_portfolio_csv,
)
from robusthedge.payoffs import Payoff

MU1 = DiscreteMeasure([1.0], [1.0])
NU1 = DiscreteMeasure([0.5, 1.5], [0.5, 0.5])
ABS_MOVE = Payoff("abs_move", lambda x, y: np.abs(y - x), 1.0)
TERMINAL = Payoff("terminal", lambda x, y: y + 0.0 * x, 1.0)


def test_terminal_claim_is_priced_by_the_mean(bs_marginals):
    mu, nu = bs_marginals
    pb = price_bounds(mu, nu, TERMINAL)
    assert pb.lower == pytest.approx(1.0, abs=1e-9)
    assert pb.upper == pytest.approx(1.0, abs=1e-9)


def test_unique_coupling_bounds():
    pb = price_bounds(MU1, NU1, ABS_MOVE)
    assert pb.lower == pytest.approx(0.5, abs=1e-12)
    assert pb.upper == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(pb.argmax.p, [[0.5, 0.5]], atol=1e-12)


def test_unique_coupling_duals():
    pots = dual_potentials(MU1, NU1, ABS_MOVE)
    assert pots.price(MU1, NU1) == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(pots.cell_values(), ABS_MOVE.grid(MU1.atoms, NU1.atoms), atol=1e-12)


def test_terminal_claim_duals(bs_marginals):
    mu, nu = bs_marginals
    pots = dual_potentials(mu, nu, TERMINAL)
    assert pots.price(mu, nu) == pytest.approx(1.0, abs=1e-9)
    assert np.all(pots.cell_values() >= TERMINAL.grid(mu.atoms, nu.atoms) - 1e-8)


def test_not_in_convex_order_is_reported():
    with pytest.raises(MotInfeasible, match="convex order"):
        price_bounds(NU1, MU1, ABS_MOVE)


def test_decompose_examples():
    grid = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    p = decompose_pwl(grid, np.full(5, 3.0))
    assert (p.cash, p.stock, p.calls) == (3.0, 0.0, ())
    p = decompose_pwl(grid, grid)
    assert (p.cash, p.stock, p.calls) == (0.0, 1.0, ())
    p = decompose_pwl(grid, np.maximum(grid - 1.0, 0.0))
    assert p.cash == 0.0 and p.stock == 0.0
    assert p.calls == ((1.0, 1.0),)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=10))
def test_decompose_reproduces_values(values):
    grid = np.linspace(0.1, 3.0, len(values))
    p = decompose_pwl(grid, values)
    np.testing.assert_allclose(p.value(grid), values, atol=1e-9)


@pytest.mark.parametrize("seed", range(25))
def test_strong_duality_random(seed):
    rng = np.random.default_rng(seed)
    mu, nu = random_martingale_pair(rng, int(rng.integers(1, 5)))
    table = rng.normal(size=(3, 3))
    pay = payoffs.from_table(np.array([0.0, 1.5, 4.0]), np.array([0.0, 1.5, 4.0]), table)
    pb = price_bounds(mu, nu, pay)
    assert pb.lower <= pb.upper + 1e-12
    assert pb.argmax.is_valid(mu, nu) and pb.argmin.is_valid(mu, nu)
    pots = dual_potentials(mu, nu, pay, pb.upper_solution)
    assert abs(pots.price(mu, nu) - pb.upper) <= 1e-8
    assert np.min(pots.cell_values() - pay.grid(mu.atoms, nu.atoms)) >= -1e-8


def test_super_hedge_dominates(bs_marginals):
    mu, nu = bs_marginals
    pay = payoffs.forward_start()
    sh = super_hedge(mu, nu, pay, T1, T)
    X, Y = np.meshgrid(mu.atoms, nu.atoms, indexing="ij")
    assert np.all(sh.payoff(X, Y) >= pay(X, Y) - 1e-8)
    assert sh.price == pytest.approx(price_bounds(mu, nu, pay).upper, abs=1e-8)
    # legs reproduce the potentials at the atoms
    np.testing.assert_allclose(sh.leg_t1.value(mu.atoms), sh.potentials.phi, atol=1e-9)
    np.testing.assert_allclose(sh.leg_T.value(nu.atoms), sh.potentials.psi, atol=1e-9)
    text = write_portfolio_csv(sh)
    assert text.startswith("leg,maturity,strike,weight\n")


def test_coupling_polytope_maximize_valid():
    mu, nu = random_martingale_pair(np.random.default_rng(11), 3)
    poly = CouplingPolytope(mu, nu)
    val, p, _ = poly.maximize(np.random.default_rng(12).normal(size=(len(mu), len(nu))))
    c = poly.coupling(p)
    assert c.is_valid(mu, nu)
    assert write_coupling_csv(c).count("\n") == len(mu) + 1
