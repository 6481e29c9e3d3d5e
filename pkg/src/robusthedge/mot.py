"""Discrete martingale optimal transport: price bounds, dual potentials, portfolios.

A coupling of ``mu`` (atoms x_i, masses alpha_i) and ``nu`` (atoms y_j,
masses beta_j) is a nonnegative matrix p with row sums alpha, column sums
beta and the martingale rows sum_j p_ij (y_j - x_i) = 0.  Variables are
flattened row-major, p[i, j] -> i * N2 + j.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lp import LpProblem, LpSolution, LpSolverError, Simplex, ToleranceSet
from .marginals import DiscreteMeasure
from .payoffs import Payoff

COUPLING_TOL = 1e-8


class MotInfeasible(ValueError):
    """The marginals admit no martingale coupling."""


class DualCheckError(RuntimeError):
    """Recovered dual potentials fail to super-replicate."""


def coupling_constraints(mu: DiscreteMeasure, nu: DiscreteMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Equality system ``A vec(p) = b``: N1 row sums, N2 column sums, N1 martingale rows."""
    x, y = mu.atoms, nu.atoms
    n1, n2 = x.size, y.size
    A = np.zeros((2 * n1 + n2, n1 * n2))
    for i in range(n1):
        A[i, i * n2 : (i + 1) * n2] = 1.0
        A[n1 + n2 + i, i * n2 : (i + 1) * n2] = y - x[i]
    for j in range(n2):
        A[n1 + j, j::n2] = 1.0
    b = np.concatenate([mu.masses, nu.masses, np.zeros(n1)])
    return A, b


@dataclass(frozen=True)
class Coupling:
    x_atoms: np.ndarray
    y_atoms: np.ndarray
    p: np.ndarray

    def residuals(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> dict[str, float]:
        p = self.p
        return {
            "rows": float(np.max(np.abs(p.sum(axis=1) - mu.masses))),
            "cols": float(np.max(np.abs(p.sum(axis=0) - nu.masses))),
            "martingale": float(np.max(np.abs(p @ self.y_atoms - p.sum(axis=1) * self.x_atoms))),
            "negativity": float(max(0.0, -p.min())),
        }

    def is_valid(self, mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = COUPLING_TOL) -> bool:
        return max(self.residuals(mu, nu).values()) <= tol

    def expectation(self, values: np.ndarray) -> float:
        return float(np.sum(self.p * values))


class CouplingPolytope:
    """The martingale coupling polytope of (mu, nu), compiled once.

    ``maximize`` warm-starts from the previous optimal basis, so long runs
    of objectives over the same marginals stay cheap.
    """

    def __init__(self, mu: DiscreteMeasure, nu: DiscreteMeasure, tol: ToleranceSet | None = None):
        self.mu, self.nu = mu, nu
        self.shape = (len(mu), len(nu))
        self.A, self.b = coupling_constraints(mu, nu)
        n = self.A.shape[1]
        problem = LpProblem(np.zeros(n), self.A, self.b, ["="] * self.A.shape[0], sense="max")
        self._simplex = Simplex(problem, tol)
        self.solves = 0

    def maximize(self, cost: np.ndarray) -> tuple[float, np.ndarray, LpSolution]:
        """Max of sum(p * cost) over couplings: (value, p, raw solution)."""
        sol = self._simplex.reoptimize(np.asarray(cost, dtype=float).ravel())
        self.solves += 1
        if sol.status == "infeasible":
            raise MotInfeasible("no martingale coupling: marginals not in convex order")
        if not sol.optimal:
            raise LpSolverError(f"coupling LP ended with status {sol.status}")
        p = np.maximum(sol.x.reshape(self.shape), 0.0)
        return float(sol.objective), p, sol

    def coupling(self, p: np.ndarray) -> Coupling:
        return Coupling(self.mu.atoms, self.nu.atoms, p)


@dataclass(frozen=True)
class PriceBounds:
    lower: float
    upper: float
    argmin: Coupling
    argmax: Coupling
    upper_solution: LpSolution


def price_bounds(mu: DiscreteMeasure, nu: DiscreteMeasure, payoff: Payoff, tol: ToleranceSet | None = None) -> PriceBounds:
    """Smallest and largest model-free price of ``payoff`` over martingale couplings."""
    poly = CouplingPolytope(mu, nu, tol)
    cost = payoff.grid(mu.atoms, nu.atoms)
    lo_neg, p_lo, _ = poly.maximize(-cost)
    hi, p_hi, sol = poly.maximize(cost)
    return PriceBounds(-lo_neg, hi, poly.coupling(p_lo), poly.coupling(p_hi), sol)


@dataclass(frozen=True)
class DualPotentials:
    """phi on x-atoms, psi on y-atoms, delta h on x-atoms, gauge phi[0] = 0."""

    x_atoms: np.ndarray
    y_atoms: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    h: np.ndarray
    gauge: str = "phi(x_1)=0"

    def cell_values(self) -> np.ndarray:
        """phi(x_i) + psi(y_j) + h(x_i)(y_j - x_i)."""
        X, Y = np.meshgrid(self.x_atoms, self.y_atoms, indexing="ij")
        return self.phi[:, None] + self.psi[None, :] + self.h[:, None] * (Y - X)

    def price(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        return float(mu.masses @ self.phi + nu.masses @ self.psi)


def dual_potentials(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    payoff: Payoff,
    solution: LpSolution | None = None,
    tol: float = COUPLING_TOL,
) -> DualPotentials:
    """Super-hedging potentials from the duals of the upper-bound LP.

    The martingale rows are written as sum_j p_ij (y_j - x_i) = 0, so their
    multipliers are already the deltas h(x_i) and need no rescaling.
    """
    if solution is None:
        solution = price_bounds(mu, nu, payoff).upper_solution
    n1, n2 = len(mu), len(nu)
    y = solution.duals
    phi, psi, h = y[:n1].copy(), y[n1 : n1 + n2].copy(), y[n1 + n2 :].copy()
    shift = phi[0]
    phi -= shift
    psi += shift
    pots = DualPotentials(mu.atoms, nu.atoms, phi, psi, h)
    cost = payoff.grid(mu.atoms, nu.atoms)
    scale = 1.0 + float(np.max(np.abs(cost)))
    gap = float(np.min(pots.cell_values() - cost))
    if gap < -tol * scale:
        raise DualCheckError(f"dual potentials undercut the payoff by {-gap:.3e}")
    return pots


@dataclass(frozen=True)
class HedgePortfolio:
    """a + b*s + sum_l c_l (s - k_l)^+ for one maturity leg."""

    cash: float
    stock: float
    calls: tuple[tuple[float, float], ...] = ()
    maturity: float | None = None

    def value(self, s):
        s = np.asarray(s, dtype=float)
        out = self.cash + self.stock * s
        for k, w in self.calls:
            out = out + w * np.maximum(s - k, 0.0)
        return out


def decompose_pwl(grid: Sequence[float], values: Sequence[float], maturity: float | None = None) -> HedgePortfolio:
    """Cash, stock and calls reproducing the piecewise-linear interpolant of ``values``."""
    x = np.asarray(grid, dtype=float)
    v = np.asarray(values, dtype=float)
    if x.size != v.size:
        raise ValueError("grid and values differ in length")
    if x.size == 1:
        return HedgePortfolio(float(v[0]), 0.0, (), maturity)
    slopes = np.diff(v) / np.diff(x)
    cash = float(v[0] - slopes[0] * x[0])
    kinks = np.diff(slopes)
    thresh = 1e-12 * (1.0 + float(np.max(np.abs(slopes))))
    calls = tuple((float(x[j + 1]), float(dk)) for j, dk in enumerate(kinks) if abs(dk) > thresh)
    return HedgePortfolio(cash, float(slopes[0]), calls, maturity)


@dataclass(frozen=True)
class SuperHedge:
    """Static t1 and T legs plus a delta entered at t1, dominating the payoff."""

    potentials: DualPotentials
    leg_t1: HedgePortfolio
    leg_T: HedgePortfolio
    price: float

    def payoff(self, x, y):
        """Terminal value phi(x) + psi(y) + h(x)(y - x), with h interpolated."""
        x = np.asarray(x, dtype=float)
        h = np.interp(x, self.potentials.x_atoms, self.potentials.h)
        return self.leg_t1.value(x) + self.leg_T.value(y) + h * (np.asarray(y) - x)


def super_hedge(mu: DiscreteMeasure, nu: DiscreteMeasure, payoff: Payoff, t1: float, T: float) -> SuperHedge:
    bounds = price_bounds(mu, nu, payoff)
    pots = dual_potentials(mu, nu, payoff, bounds.upper_solution)
    return SuperHedge(
        pots,
        decompose_pwl(mu.atoms, pots.phi, t1),
        decompose_pwl(nu.atoms, pots.psi, T),
        pots.price(mu, nu),
    )


def write_coupling_csv(coupling: Coupling) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x\\y"] + [repr(float(v)) for v in coupling.y_atoms])
    for xi, row in zip(coupling.x_atoms, coupling.p):
        w.writerow([repr(float(xi))] + [repr(float(v)) for v in row])
    return buf.getvalue()


def write_portfolio_csv(sh: SuperHedge) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["leg", "maturity", "strike", "weight"])
    for leg, port in (("t1", sh.leg_t1), ("T", sh.leg_T)):
        mat = repr(float(port.maturity)) if port.maturity is not None else ""
        w.writerow([leg, mat, "cash", repr(port.cash)])
        w.writerow([leg, mat, "stock", repr(port.stock)])
        for k, wt in port.calls:
            w.writerow([leg, mat, repr(k), repr(wt)])
    mat = repr(float(sh.leg_t1.maturity)) if sh.leg_t1.maturity is not None else ""
    for xi, hi in zip(sh.potentials.x_atoms, sh.potentials.h):
        w.writerow(["delta", mat, repr(float(xi)), repr(float(hi))])
    return buf.getvalue()
