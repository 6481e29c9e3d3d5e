"""Min-max and max-min robust static hedges against martingale couplings.

Instruments are cash, the stock, calls maturing at t1 and, optionally, calls
maturing at T.  For a weight vector w the cell hedging error is
D_ij(w) = c(x_i, y_j) - sum_k w_k Phi_k(x_i, y_j), with Phi_k the payoff of
instrument k.  Stock is represented by its T value y; at horizon t1 this is
equivalent to x because every coupling is a martingale.

Horizon T:  f_T(w)  = max_p sum_ij p_ij |D_ij(w)|
Horizon t1: f_t1(w) = max_p sum_i |sum_j p_ij D_ij(w)|

The t1 objective is a maximum of a convex function over a polytope; it is
evaluated exactly by enumerating the sign pattern of the rows.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lp import LpProblem, LpSolverError, ToleranceSet
from .lp import solve as lp_solve
from .marginals import DiscreteMeasure
from .mot import Coupling, CouplingPolytope, MotInfeasible, SuperHedge, coupling_constraints
from .payoffs import Payoff

log = logging.getLogger(__name__)

SIGN_CAP = 16
_ROUNDING = 1e-10  # slack when re-checking a tie-broken solution
DEFAULT_BOX = 100.0


class SignCapExceeded(ValueError):
    pass


@dataclass(frozen=True)
class InstrumentSet:
    strikes: tuple[float, ...] = ()
    strikes_T: tuple[float, ...] = ()
    include_stock: bool = True

    def __post_init__(self) -> None:
        for name in ("strikes", "strikes_T"):
            ks = tuple(float(k) for k in getattr(self, name))
            object.__setattr__(self, name, ks)
            if any(b <= a for a, b in zip(ks, ks[1:])):
                raise ValueError(f"{name} must be strictly increasing")
            if any(k <= 0 for k in ks):
                raise ValueError(f"{name} must be positive")

    @property
    def include_cash(self) -> bool:
        return True

    @property
    def size(self) -> int:
        return 1 + int(self.include_stock) + len(self.strikes) + len(self.strikes_T)

    @property
    def x_only(self) -> bool:
        return not self.strikes_T

    def labels(self) -> list[str]:
        out = ["cash"] + (["stock"] if self.include_stock else [])
        out += [f"call_t1@{k!r}" for k in self.strikes]
        out += [f"call_T@{k!r}" for k in self.strikes_T]
        return out

    def check_against(self, mu: DiscreteMeasure) -> None:
        if self.strikes and self.strikes[-1] >= mu.atoms[-1]:
            raise ValueError("t1 strikes must lie inside (0, largest x-atom)")

    def basis(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Instrument payoffs on the cell grid, shape (size, N1, N2)."""
        X, Y = np.meshgrid(x, y, indexing="ij")
        layers = [np.ones_like(X)]
        if self.include_stock:
            layers.append(Y.copy())
        layers += [np.maximum(X - k, 0.0) for k in self.strikes]
        layers += [np.maximum(Y - k, 0.0) for k in self.strikes_T]
        return np.stack(layers)

    def basis_x(self, x: np.ndarray) -> np.ndarray:
        """Payoffs at t1 of the x-only instruments, shape (N1, size)."""
        if not self.x_only:
            raise ValueError("T-maturity calls have no coupling-free value at t1")
        cols = [np.ones_like(x)] + ([x] if self.include_stock else [])
        cols += [np.maximum(x - k, 0.0) for k in self.strikes]
        return np.stack(cols, axis=1)


@dataclass(frozen=True)
class Weights:
    instruments: InstrumentSet
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", v)
        if v.size != self.instruments.size:
            raise ValueError(f"expected {self.instruments.size} weights, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("weights must be finite")

    @property
    def cash(self) -> float:
        return float(self.values[0])

    @property
    def stock(self) -> float:
        return float(self.values[1]) if self.instruments.include_stock else 0.0

    def items(self) -> list[tuple[str, float]]:
        return list(zip(self.instruments.labels(), map(float, self.values)))


def portfolio_value_at_t1(x, w: Weights | np.ndarray, instruments: InstrumentSet):
    """w0 + w1 x + sum_l w_l (x - K_l)^+ ; defined for t1-only instrument sets."""
    wv = w.values if isinstance(w, Weights) else np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    return instruments.basis_x(np.atleast_1d(x)) @ wv if x.ndim else float((instruments.basis_x(x[None]) @ wv)[0])


@dataclass(frozen=True)
class InnerResult:
    value: float
    coupling: Coupling
    signs: np.ndarray | None = None
    lp_solves: int = 0


class HedgeProblem:
    """Marginals, payoff and instruments compiled for repeated oracle calls."""

    def __init__(
        self,
        instruments: InstrumentSet,
        mu: DiscreteMeasure,
        nu: DiscreteMeasure,
        payoff: Payoff,
        tol: ToleranceSet | None = None,
        sign_cap: int = SIGN_CAP,
    ):
        keep = mu.masses > 0
        if not keep.all():
            # the t1 rows divide by alpha_i; massless atoms carry no error anyway
            log.info("dropping %d massless x-atoms", int((~keep).sum()))
            mu = DiscreteMeasure(mu.atoms[keep], mu.masses[keep])
        self.instruments, self.mu, self.nu, self.payoff = instruments, mu, nu, payoff
        self.tol = tol
        self.sign_cap = sign_cap
        self.cost = payoff.grid(mu.atoms, nu.atoms)
        self.Phi = instruments.basis(mu.atoms, nu.atoms)
        self.poly = CouplingPolytope(mu, nu, tol)
        self._table: SupportTable | None = None
        self._last_signs: np.ndarray | None = None

    @property
    def n1(self) -> int:
        return len(self.mu)

    def errors(self, w: np.ndarray) -> np.ndarray:
        return self.cost - np.tensordot(w, self.Phi, axes=1)

    # -- horizon T -------------------------------------------------------

    def oracle_T(self, w: np.ndarray) -> InnerResult:
        D = self.errors(w)
        val, p, _ = self.poly.maximize(np.abs(D))
        return InnerResult(val, self.poly.coupling(p), lp_solves=1)

    # -- horizon t1 ------------------------------------------------------

    def table(self) -> "SupportTable":
        if self._table is None:
            self._table = SupportTable.build(self)
        return self._table

    def oracle_t1(self, w: np.ndarray, method: str = "auto") -> InnerResult:
        if self.n1 > self.sign_cap:
            raise SignCapExceeded(f"sign enumeration cap exceeded ({self.n1} > {self.sign_cap} x-atoms)")
        if method == "auto":
            method = "table" if self.instruments.x_only else "enumerate"
        if method == "table":
            return self.table().evaluate(w)
        if method == "enumerate":
            return self._enumerate(w)
        raise ValueError(f"unknown method {method!r}")

    def _enumerate(self, w: np.ndarray) -> InnerResult:
        """Pruned sign enumeration for a general instrument basis.

        Each pattern's LP value is bounded by the sum of the row-wise maxima,
        so patterns whose bound cannot beat the incumbent are skipped.
        """
        D = self.errors(w)
        n1 = self.n1
        solves = 0
        best_val, best_p, best_s = -np.inf, None, None

        def consider(p: np.ndarray) -> None:
            nonlocal best_val, best_p, best_s
            r = np.sum(p * D, axis=1)
            v = float(np.sum(np.abs(r)))
            if v > best_val:
                best_val, best_p, best_s = v, p, np.where(r >= 0, 1, -1)

        upper = np.empty((2, n1))
        for i in range(n1):
            for k, sgn in enumerate((1.0, -1.0)):
                cost = np.zeros_like(D)
                cost[i] = sgn * D[i]
                upper[k, i], p, _ = self.poly.maximize(cost)
                solves += 1
                consider(p)
        seeds = [best_s]
        if self._last_signs is not None and self._last_signs.size == n1:
            seeds.append(self._last_signs)
        done = set()
        for s in seeds:
            key = tuple(s)
            if key not in done:
                done.add(key)
                _, p, _ = self.poly.maximize(s[:, None] * D)
                solves += 1
                consider(p)
        bits = _sign_patterns(n1)  # (2^n1, n1) of +-1
        bound = np.where(bits > 0, upper[0], upper[1]).sum(axis=1)
        alive = np.flatnonzero(bound > best_val + 1e-12 * (1.0 + abs(best_val)))
        # Gray-code order makes consecutive warm-started LPs differ in one
        # sign, which is much cheaper than jumping around in bound order
        gray = _gray_order(n1)
        rank = np.empty_like(gray)
        rank[gray] = np.arange(gray.size)
        order = alive[np.argsort(rank[alive], kind="stable")]
        for idx in order:
            if bound[idx] <= best_val + 1e-12 * (1.0 + abs(best_val)):
                continue
            s = bits[idx]
            key = tuple(s)
            if key in done:
                continue
            done.add(key)
            _, p, _ = self.poly.maximize(s[:, None] * D)
            solves += 1
            consider(p)
        self._last_signs = best_s
        return InnerResult(best_val, self.poly.coupling(best_p), best_s, solves)

    def local_t1(self, w: np.ndarray, seeds: Sequence[np.ndarray], rounds: int = 20) -> InnerResult:
        """Alternating sign/coupling ascent from each seed pattern.

        The result is a lower bound on the t1 worst case, found cheaply; it
        is exact whenever the ascent lands on the maximizing pattern.
        """
        D = self.errors(w)
        best_val, best_p, best_s = -np.inf, None, None
        solves = 0
        for s0 in seeds:
            s = np.asarray(s0, dtype=float)
            for _ in range(rounds):
                _, p, _ = self.poly.maximize(s[:, None] * D)
                solves += 1
                r = np.sum(p * D, axis=1)
                v = float(np.sum(np.abs(r)))
                s_new = np.where(r >= 0, 1.0, -1.0)
                if v > best_val:
                    best_val, best_p, best_s = v, p, s_new
                if np.array_equal(s_new, s):
                    break
                s = s_new
        return InnerResult(best_val, self.poly.coupling(best_p), best_s, solves)

    def oracle(self, w: np.ndarray, horizon: str) -> InnerResult:
        return self.oracle_T(w) if horizon == "T" else self.oracle_t1(w)


def inner_worst_case_T(w, instruments: InstrumentSet, mu: DiscreteMeasure, nu: DiscreteMeasure, payoff: Payoff) -> InnerResult:
    """Worst expected absolute error at T over martingale couplings."""
    wv = w.values if isinstance(w, Weights) else np.asarray(w, dtype=float)
    return HedgeProblem(instruments, mu, nu, payoff).oracle_T(wv)


def inner_worst_case_t1(w, instruments: InstrumentSet, mu: DiscreteMeasure, nu: DiscreteMeasure, payoff: Payoff) -> InnerResult:
    """Worst sum over x-atoms of the absolute conditional error at t1."""
    wv = w.values if isinstance(w, Weights) else np.asarray(w, dtype=float)
    return HedgeProblem(instruments, mu, nu, payoff).oracle_t1(wv)


def _known(signs: np.ndarray, patterns: list[np.ndarray]) -> bool:
    return any(np.array_equal(signs, s) for s in patterns)


def _separate(pr: HedgeProblem, w: np.ndarray, patterns: list[np.ndarray], stats: dict) -> tuple[InnerResult, bool]:
    """Worst case at w: a new pattern from the cheap ascent, else the exact oracle.

    Seeds are the stored patterns scoring best at w, so when the ascent
    finds nothing new the model is usually exact and the full enumeration
    only confirms it.  The flag tells whether the result is exact.
    """
    D = pr.errors(w)
    scores = [pr.poly.maximize(s[:, None] * D)[0] for s in patterns]
    order = np.argsort(scores)[::-1][:3]
    res = pr.local_t1(w, [patterns[k] for k in order])
    stats["local_lps"] = stats.get("local_lps", 0) + res.lp_solves + len(patterns)
    if not _known(res.signs, patterns) and res.value > max(scores) + 1e-12 * (1.0 + max(scores)):
        return res, False
    exact = pr.oracle_t1(w)
    stats["exact_calls"] = stats.get("exact_calls", 0) + 1
    stats["exact_lps"] = stats.get("exact_lps", 0) + exact.lp_solves
    return exact, True


def _pattern_bundle(pr: HedgeProblem, box: float, tol: float, max_cuts: int, stats: dict):
    """Level-bundle pattern generation for the t1 worst case with T instruments.

    The lower bound comes from the pattern master.  Trial points minimize the
    l1 distance to the best certified point, subject to the model staying
    below a level halfway between the bound and the best value.  Centring
    keeps the iterates from jumping across the large optimal faces of the
    model.
    """
    d = pr.instruments.size
    start = pr.local_t1(np.zeros(d), [np.ones(pr.n1), -np.ones(pr.n1)])
    patterns = [start.signs]
    best: InnerResult | None = None
    best_exact = False
    w_best = np.zeros(d)
    lower = -np.inf
    converged = False
    iterations = 0
    kappa = 0.5
    while iterations < max_cuts:
        iterations += 1
        w_lb, lower = _block_master(pr, patterns, box)
        if best is not None and best.value - lower <= tol * (1.0 + abs(best.value)):
            if best_exact:
                converged = True
                break
            # the incumbent came from the ascent; certify it
            best, best_exact = pr.oracle_t1(w_best), True
            stats["exact_calls"] = stats.get("exact_calls", 0) + 1
            if not _known(best.signs, patterns):
                patterns.append(best.signs)
            continue
        if best is None:
            w = w_lb
        else:
            level = lower + kappa * (best.value - lower)
            w, _ = _block_master(pr, patterns, box, level, w_best)
        res, exact = _separate(pr, w, patterns, stats)
        if best is None or res.value < best.value:
            best, best_exact, w_best = res, exact, w
        if not _known(res.signs, patterns):
            patterns.append(res.signs)
            kappa = 0.5
        else:
            # the model was exact at w, so aim closer to the bound next time
            kappa = max(0.01, 0.1 * kappa)
    if best is None:
        best, _ = _separate(pr, w_best, patterns, stats)
    stats["patterns"] = len(patterns)
    return w_best, lower, best, iterations, converged, patterns


def _sign_patterns(n: int) -> np.ndarray:
    idx = np.arange(2**n)[:, None]
    return np.where((idx >> np.arange(n)[None, :]) & 1, -1, 1).astype(float)


def _gray_order(n: int) -> np.ndarray:
    g = np.arange(2**n)
    return g ^ (g >> 1)


@dataclass
class SupportTable:
    """sigma(s) = max_p sum_i s_i sum_j p_ij c_ij for every sign pattern s.

    With only t1 instruments the hedge enters row i as alpha_i * h_i(w),
    independent of the coupling, so f_t1(w) = max_s [sigma(s) - sum_i s_i
    alpha_i h_i(w)] and the table is reused for every weight vector.
    """

    problem: HedgeProblem
    patterns: np.ndarray
    sigma: np.ndarray
    lp_solves: int

    @classmethod
    def build(cls, problem: HedgeProblem) -> "SupportTable":
        n1 = problem.n1
        patterns = _sign_patterns(n1)
        sigma = np.empty(patterns.shape[0])
        for code in _gray_order(n1):
            s = patterns[code]
            sigma[code], _, _ = problem.poly.maximize(s[:, None] * problem.cost)
        return cls(problem, patterns, sigma, patterns.shape[0])

    def hedge_rows(self, w: np.ndarray) -> np.ndarray:
        pr = self.problem
        return pr.mu.masses * (pr.instruments.basis_x(pr.mu.atoms) @ w)

    def values(self, w: np.ndarray) -> np.ndarray:
        return self.sigma - self.patterns @ self.hedge_rows(w)

    def evaluate(self, w: np.ndarray) -> InnerResult:
        vals = self.values(w)
        k = int(np.argmax(vals))
        s = self.patterns[k]
        pr = self.problem
        _, p, _ = pr.poly.maximize(s[:, None] * pr.cost)
        return InnerResult(float(vals[k]), pr.poly.coupling(p), s, 1)

    def gradients(self) -> np.ndarray:
        """g_s with value_s(w) = sigma(s) - g_s.w, one row per pattern."""
        pr = self.problem
        return self.patterns @ (pr.mu.masses[:, None] * pr.instruments.basis_x(pr.mu.atoms))


@dataclass(frozen=True)
class MinMaxResult:
    weights: Weights
    value: float
    worst_coupling: Coupling
    iterations: int
    gap: float
    horizon: str
    converged: bool = True
    lower_bound: float = 0.0
    stats: dict = field(default_factory=dict)


def _table_master(table: "SupportTable", box: float, cap: float | None = None):
    """Exact t1 master over every sign pattern, in dual form.

    The primal is min over |w| <= box of max_s [sigma(s) - g_s.w]; its dual
    has one column lambda_s >= 0 per pattern and one row per weight, so it
    stays small for the dense simplex.  With ``cap`` the dual instead
    encodes min sum|w| subject to every pattern value <= cap.
    Returns (w, master objective).
    """
    G = table.gradients()  # (n_patterns, d)
    npat, d = G.shape
    L_A, L_c, L_lo, L_up = _link_columns(d, box, cap is not None)
    if cap is None:
        A = np.zeros((d + 1, npat + L_A.shape[1]))
        A[0, :npat] = 1.0
        A[1:, :npat] = G.T
        A[1:, npat:] = L_A
        b = np.concatenate([[1.0], np.zeros(d)])
        c = np.concatenate([table.sigma, L_c])
        link = slice(1, d + 1)
    else:
        A = np.hstack([G.T, L_A])
        b = np.zeros(d)
        c = np.concatenate([table.sigma - cap, L_c])
        link = slice(0, d)
    lower = np.concatenate([np.zeros(npat), L_lo])
    upper = np.concatenate([np.full(npat, np.inf), L_up])
    sol = lp_solve(LpProblem(c, A, b, ["="] * A.shape[0], sense="max", lower=lower, upper=upper), table.problem.tol)
    if not sol.optimal:
        raise LpSolverError(f"table master ended with status {sol.status}")
    return np.clip(sol.duals[link], -box, box), float(sol.objective)


def _link_columns(
    d: int, box: float, tie_break: bool, center: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Columns closing the rows G_k(q) = e+_k - e-_k (+ r_k) of a dual master.

    e+- >= 0 priced at -box turn the unconstrained inner minimum over w into
    the box |w_k| <= box.  The free band r_k in [-1, 1] is the conjugate of
    |w_k - center_k|, present only in the l1 phases.
    """
    cols = [-np.eye(d), np.eye(d)]
    c = [np.full(2 * d, -box)]
    lower = [np.zeros(2 * d)]
    upper = [np.full(2 * d, np.inf)]
    if tie_break:
        cols.append(-np.eye(d))
        c.append(np.zeros(d) if center is None else -np.asarray(center, dtype=float))
        lower.append(-np.ones(d))
        upper.append(np.ones(d))
    return np.hstack(cols), np.concatenate(c), np.concatenate(lower), np.concatenate(upper)


def _block_master(
    problem: HedgeProblem,
    patterns: list[np.ndarray],
    box: float,
    cap: float | None = None,
    center: np.ndarray | None = None,
):
    """Exact min over w of max_{s in patterns} LP_s(w), solved in its dual form.

    Variables are one scaled coupling q^s per pattern and its weight theta_s.
    The duals of the rows linking q to the instruments are the weights.
    With ``cap`` the master instead minimizes sum|w| subject to the value
    staying below cap; the mixing weights then sum to a free pi >= 0 priced
    at -cap.  ``center`` shifts that l1 norm to sum|w - center|.  Returns
    (w, master objective).
    """
    A_c, b_c = coupling_constraints(problem.mu, problem.nu)
    mrows, ncell = A_c.shape
    S = len(patterns)
    d = problem.instruments.size
    Phi = problem.Phi.reshape(d, ncell)
    L_A, L_c, L_lo, L_up = _link_columns(d, box, cap is not None, center)
    nq = S * ncell + S + (cap is not None)
    nrow = S * mrows + 1 + d
    A = np.zeros((nrow, nq + L_A.shape[1]))
    b = np.zeros(nrow)
    c = np.zeros(A.shape[1])
    for k, s in enumerate(patterns):
        srow = np.repeat(s, problem.nu.atoms.size)
        cols = slice(k * ncell, (k + 1) * ncell)
        A[k * mrows : (k + 1) * mrows, cols] = A_c
        A[k * mrows : (k + 1) * mrows, S * ncell + k] = -b_c
        A[S * mrows + 1 :, cols] = Phi * srow[None, :]
        c[cols] = srow * problem.cost.ravel()
    A[S * mrows, S * ncell : S * ncell + S] = 1.0
    if cap is None:
        b[S * mrows] = 1.0
    else:
        A[S * mrows, nq - 1] = -1.0
        c[nq - 1] = -cap
    A[S * mrows + 1 :, nq:] = L_A
    c[nq:] = L_c
    lower = np.concatenate([np.zeros(nq), L_lo])
    upper = np.concatenate([np.full(nq, np.inf), L_up])
    sol = lp_solve(LpProblem(c, A, b, ["="] * nrow, sense="max", lower=lower, upper=upper), problem.tol, backend="highs")
    if not sol.optimal:
        raise LpSolverError(f"pattern master ended with status {sol.status}")
    return np.clip(sol.duals[S * mrows + 1 :], -box, box), float(sol.objective)


def _smaller(w_new: np.ndarray, w_old: np.ndarray) -> bool:
    """The tie-break only exists to shrink sum |w|; keep the first solution otherwise."""
    return float(np.abs(w_new).sum()) < float(np.abs(w_old).sum())


def _dual_master_T(problem: HedgeProblem, box: float, cap: float | None = None):
    """min over the weight box of f_T as one LP in (p+, p-); duals give w.

    With ``cap``: min sum|w| subject to f_T(w) <= cap, the couplings being
    scaled by a free pi >= 0 priced at -cap.
    """
    A_c, b_c = coupling_constraints(problem.mu, problem.nu)
    mrows, ncell = A_c.shape
    d = problem.instruments.size
    Phi = problem.Phi.reshape(d, ncell)
    cost = problem.cost.ravel()
    L_A, L_c, L_lo, L_up = _link_columns(d, box, cap is not None)
    npi = int(cap is not None)
    A = np.zeros((mrows + d, 2 * ncell + npi + L_A.shape[1]))
    A[:mrows, :ncell] = A_c
    A[:mrows, ncell : 2 * ncell] = A_c
    A[mrows:, :ncell] = Phi
    A[mrows:, ncell : 2 * ncell] = -Phi
    A[mrows:, 2 * ncell + npi :] = L_A
    c = np.concatenate([cost, -cost, [-cap] if npi else [], L_c])
    if npi:
        A[:mrows, 2 * ncell] = -b_c
        b = np.zeros(mrows + d)
    else:
        b = np.concatenate([b_c, np.zeros(d)])
    lower = np.concatenate([np.zeros(2 * ncell + npi), L_lo])
    upper = np.concatenate([np.full(2 * ncell + npi, np.inf), L_up])
    sol = lp_solve(LpProblem(c, A, b, ["="] * (mrows + d), sense="max", lower=lower, upper=upper), problem.tol)
    if sol.status == "infeasible":
        raise MotInfeasible("no martingale coupling: marginals not in convex order")
    if not sol.optimal:
        raise LpSolverError(f"horizon-T master ended with status {sol.status}")
    return np.clip(sol.duals[mrows:], -box, box), float(sol.objective)


def minmax_hedge(
    instruments: InstrumentSet,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    payoff: Payoff,
    horizon: str = "t1",
    w_box: float = DEFAULT_BOX,
    tol: float = 1e-6,
    max_cuts: int = 500,
    problem: HedgeProblem | None = None,
    tie_break: bool = True,
    tie_tol: float = 1e-9,
) -> MinMaxResult:
    """Weights minimizing the worst-case expected absolute hedging error.

    Horizon T is a single LP.  Horizon t1 uses cutting planes over the
    sign-pattern table when all instruments mature at t1, and pattern
    generation with an exact dual master otherwise.

    Optimal weights are often not unique.  With ``tie_break`` a second phase
    returns, among weights whose worst case is within ``tie_tol`` (relative)
    of the optimum, one with the smallest sum |w_k|.
    """
    if horizon not in ("T", "t1"):
        raise ValueError("horizon must be 'T' or 't1'")
    if not w_box > 0 or not np.isfinite(w_box):
        raise ValueError("a finite positive weight box is required")
    pr = problem or HedgeProblem(instruments, mu, nu, payoff)
    d = instruments.size
    stats: dict = {}

    def slack(value: float) -> float:
        return tie_tol * (1.0 + abs(value))

    iterations = 0
    converged = True
    if horizon == "T":
        w, lower = _dual_master_T(pr, w_box)
        best = pr.oracle_T(w)
        iterations = 1
        if tie_break:
            cap = best.value + slack(best.value)
            w2, _ = _dual_master_T(pr, w_box, cap)
            res2 = pr.oracle_T(w2)
            if res2.value <= cap + _ROUNDING * (1.0 + cap) and _smaller(w2, w):
                w, best = w2, res2
    elif instruments.x_only:
        table = pr.table()
        stats["table_lps"] = table.lp_solves
        w, lower = _table_master(table, w_box)
        value = float(table.values(w).max())
        iterations = 1
        if tie_break:
            cap = value + slack(value)
            w2, _ = _table_master(table, w_box, cap)
            if table.values(w2).max() <= cap + _ROUNDING * (1.0 + cap) and _smaller(w2, w):
                w = w2
            iterations = 2
        best = table.evaluate(w)
    else:
        w, lower, best, iterations, converged, patterns = _pattern_bundle(pr, w_box, tol, max_cuts, stats)
        if tie_break:
            cap = best.value + slack(best.value)
            for _ in range(max_cuts):
                iterations += 1
                w2, _ = _block_master(pr, patterns, w_box, cap)
                res2, _ = _separate(pr, w2, patterns, stats)
                if res2.value <= cap + _ROUNDING * (1.0 + cap):
                    if _smaller(w2, w):
                        w, best = w2, res2
                    break
                if _known(res2.signs, patterns):
                    break
                patterns.append(res2.signs)
        stats["patterns"] = len(patterns)

    if not converged:
        log.warning("min-max solver stopped before reaching the gap tolerance")
    return MinMaxResult(
        Weights(instruments, w),
        best.value,
        best.coupling,
        iterations,
        max(0.0, best.value - lower),
        horizon,
        converged,
        lower,
        stats,
    )


@dataclass(frozen=True)
class MaxMinResult:
    value: float
    coupling: Coupling
    a: np.ndarray
    b: np.ndarray
    restarts: int


def _l1_fit(v: np.ndarray, A: np.ndarray, box: float) -> tuple[float, np.ndarray]:
    """min over |w| <= box of sum_i |v_i - (A w)_i| via its dual in lambda."""
    n, d = A.shape
    # vars: lambda in [-1, 1], e+ , e- >= 0 ; A' lambda - e+ + e- = 0
    c = np.concatenate([v, np.full(2 * d, -box)])
    M = np.hstack([A.T, -np.eye(d), np.eye(d)])
    lower = np.concatenate([-np.ones(n), np.zeros(2 * d)])
    upper = np.concatenate([np.ones(n), np.full(2 * d, np.inf)])
    sol = lp_solve(LpProblem(c, M, np.zeros(d), ["="] * d, sense="max", lower=lower, upper=upper))
    if not sol.optimal:
        raise LpSolverError(f"l1 fit ended with status {sol.status}")
    return float(sol.objective), sol.x[:n]


def maxmin_hedge(
    instruments: InstrumentSet,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    payoff: Payoff,
    restarts: int = 20,
    seed: int = 0,
    w_box: float = DEFAULT_BOX,
    start: Coupling | None = None,
    max_rounds: int = 50,
    problem: HedgeProblem | None = None,
) -> MaxMinResult:
    """Best lower bound max_p min_w of the t1 objective by alternating ascent.

    For a fixed coupling the inner minimum is an l1 regression whose dual
    multipliers lambda_i in [-1, 1] are returned as a = alpha*lambda^+ and
    b = alpha*lambda^-.  For fixed lambda the best coupling solves one LP.
    Every reported value is attained by an actual coupling, so it never
    exceeds the min-max value.
    """
    pr = problem or HedgeProblem(instruments, mu, nu, payoff)
    d = instruments.size
    n1, n2 = pr.n1, len(nu)
    A_c, b_c = coupling_constraints(pr.mu, nu)
    Phi = pr.Phi.reshape(d, n1 * n2)
    cost = pr.cost.ravel()

    def g(p: np.ndarray) -> tuple[float, np.ndarray]:
        v = np.sum(p * pr.cost, axis=1)
        A = np.einsum("ij,kij->ik", p, pr.Phi)
        return _l1_fit(v, A, w_box)

    # for fixed lambda: max sum lambda_i c_ij p_ij - box * ||G(p)||_1
    def ascend_p(lam: np.ndarray) -> np.ndarray:
        lrow = np.repeat(lam, n2)
        A = np.zeros((A_c.shape[0] + d, n1 * n2 + 2 * d))
        A[: A_c.shape[0], : n1 * n2] = A_c
        A[A_c.shape[0] :, : n1 * n2] = Phi * lrow[None, :]
        A[A_c.shape[0] :, n1 * n2 : n1 * n2 + d] = -np.eye(d)
        A[A_c.shape[0] :, n1 * n2 + d :] = np.eye(d)
        c = np.concatenate([lrow * cost, np.full(2 * d, -w_box)])
        b = np.concatenate([b_c, np.zeros(d)])
        sol = lp_solve(LpProblem(c, A, b, ["="] * A.shape[0], sense="max"), pr.tol)
        if sol.status == "infeasible":
            raise MotInfeasible("no martingale coupling: marginals not in convex order")
        if not sol.optimal:
            raise LpSolverError(f"coupling step ended with status {sol.status}")
        return np.maximum(sol.x[: n1 * n2].reshape(n1, n2), 0.0)

    rng = np.random.default_rng(seed)
    starts: list[np.ndarray] = []
    if start is not None:
        starts.append(start.p)
    for _ in range(restarts):
        _, p, _ = pr.poly.maximize(rng.standard_normal((n1, n2)))
        starts.append(p)
    best_val, best_p, best_lam = -np.inf, None, None
    for p in starts:
        val, lam = g(p)
        for _ in range(max_rounds):
            p_new = ascend_p(lam)
            val_new, lam_new = g(p_new)
            if val_new <= val + 1e-12 * (1.0 + abs(val)):
                break
            p, val, lam = p_new, val_new, lam_new
        if val > best_val:
            best_val, best_p, best_lam = val, p, lam
    alpha = pr.mu.masses
    return MaxMinResult(
        best_val,
        pr.poly.coupling(best_p),
        alpha * np.maximum(best_lam, 0.0),
        alpha * np.maximum(-best_lam, 0.0),
        len(starts),
    )


def conditional_curve(coupling: Coupling, payoff: Payoff) -> list[tuple[float, float]]:
    """(x_i, E[c(x_i, Y) | X = x_i]) under the coupling."""
    c = payoff.grid(coupling.x_atoms, coupling.y_atoms)
    out = []
    for i, x in enumerate(coupling.x_atoms):
        a = coupling.p[i].sum()
        if a <= 0:
            log.warning("x-atom %r carries no mass; skipped", float(x))
            continue
        out.append((float(x), float(coupling.p[i] @ c[i] / a)))
    return out


def super_hedge_weights(sh: SuperHedge) -> Weights:
    """The dual super-hedge expressed in cash, stock, t1 calls and T calls.

    The delta position h(S_t1)(S_T - S_t1) has zero value at t1 and is
    carried separately by the caller.
    """
    t1 = tuple(k for k, _ in sh.leg_t1.calls)
    tT = tuple(k for k, _ in sh.leg_T.calls)
    inst = InstrumentSet(strikes=t1, strikes_T=tT, include_stock=True)
    vals = [sh.leg_t1.cash + sh.leg_T.cash, sh.leg_t1.stock + sh.leg_T.stock]
    vals += [w for _, w in sh.leg_t1.calls] + [w for _, w in sh.leg_T.calls]
    return Weights(inst, np.array(vals))


def write_weights_csv(w: Weights) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["instrument", "weight"])
    for label, val in w.items():
        out.writerow([label, repr(val)])
    return buf.getvalue()


def write_curve_csv(rows: Sequence[tuple[float, float, float, float]]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["x", "conditional_value", "true_model_value", "portfolio_value"])
    for r in rows:
        out.writerow([repr(float(v)) for v in r])
    return buf.getvalue()
