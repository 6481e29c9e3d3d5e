"""Dense two-phase revised simplex with primal and dual outputs.

Problems are stated in "user" form (``min``/``max``, mixed row relations,
variable bounds) and converted to the standard form ``min c'x, Ax = b,
x >= 0, b >= 0`` internally.  The solver keeps an explicit dense basis
inverse, updated by rank-one eta transforms and refactorized periodically.

Pricing is Dantzig's rule; after ``10 * (m + n)`` consecutive degenerate
pivots the solver switches to Bland's rule for the rest of the solve.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import qr

__all__ = [
    "LpProblem",
    "LpSolution",
    "LpSolverError",
    "Simplex",
    "ToleranceSet",
    "dump_problem_csv",
    "solve",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_PERTURB = 1e-7
_REFACTOR_EVERY = 40
_NOISE = 1e-6


class LpSolverError(RuntimeError):
    """Numerical breakdown: singular basis or iteration cap hit."""


@dataclass(frozen=True)
class ToleranceSet:
    feasibility: float = 1e-8
    pivot: float = 1e-10
    duality_gap: float = 1e-8
    optimality: float = 1e-10
    phase1: float = 1e-9


@dataclass
class LpProblem:
    """A linear program ``sense c'x`` subject to ``A x (rel) b`` and bounds.

    ``relations`` holds one of ``"<="``, ``"="``, ``">="`` per row.  ``lower``
    defaults to zero for every variable; use ``-np.inf`` for free variables.
    ``upper`` defaults to ``+inf``.
    """

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    relations: Sequence[str]
    sense: str = "min"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.relations = list(self.relations)
        m = self.A.shape[0]
        if self.b.size != m or len(self.relations) != m:
            raise ValueError("A, b and relations disagree on the number of rows")
        bad = set(self.relations) - {"<=", "=", ">="}
        if bad:
            raise ValueError(f"unknown row relations {sorted(bad)}")
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        if self.lower.size != n or self.upper.size != n:
            raise ValueError("bounds must have one entry per variable")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("LP data must be finite")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(np.isposinf(self.lower)) or np.any(np.isneginf(self.upper)):
            raise ValueError("infinite bound on the wrong side")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0
    dual_objective: float | None = None
    basis: list[int] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class Simplex:
    """A compiled LP that can be solved and then re-solved with new costs.

    Re-solving keeps the constraint data and warm-starts phase 2 from the
    last optimal basis, which is what makes enumerating thousands of
    objectives over one coupling polytope affordable.
    """

    def __init__(self, problem: LpProblem, tol: ToleranceSet | None = None):
        self.problem = problem
        self.tol = tol or ToleranceSet()
        self._compile()
        self._basis: list[int] | None = None
        self._Binv: np.ndarray | None = None
        self._feasible: bool | None = None

    # -- standard form ----------------------------------------------------

    def _compile(self) -> None:
        p = self.problem
        m0, n0 = p.A.shape
        cols: list[np.ndarray] = []  # map from standard vars to user vars
        offset = np.zeros(n0)
        extra_rows: list[tuple[int, float]] = []  # (std col, bound) rows "x' <= u"
        for j in range(n0):
            lo, up = p.lower[j], p.upper[j]
            e = np.zeros(n0)
            e[j] = 1.0
            if np.isfinite(lo):
                offset[j] = lo
                cols.append(e)
                if np.isfinite(up):
                    extra_rows.append((len(cols) - 1, up - lo))
            elif np.isfinite(up):
                offset[j] = up
                cols.append(-e)
            else:
                cols.append(e)
                cols.append(-e)
        T = np.array(cols).T if cols else np.zeros((n0, 0))
        nstruct = T.shape[1]

        A_s = p.A @ T
        b_s = p.b - p.A @ offset
        rel = list(p.relations)
        if extra_rows:
            ub = np.zeros((len(extra_rows), nstruct))
            for r, (col, bound) in enumerate(extra_rows):
                ub[r, col] = 1.0
            A_s = np.vstack([A_s, ub])
            b_s = np.concatenate([b_s, [bnd for _, bnd in extra_rows]])
            rel += ["<="] * len(extra_rows)
        self._rows_before = A_s.shape[0]
        kept, self._inconsistent = self._independent_rows(A_s, b_s, rel)
        self._kept = kept
        A_s, b_s, rel = A_s[kept], b_s[kept], [rel[i] for i in kept]
        m = A_s.shape[0]

        slack_rows = [i for i in range(m) if rel[i] != "="]
        S = np.zeros((m, len(slack_rows)))
        for k, i in enumerate(slack_rows):
            S[i, k] = 1.0 if rel[i] == "<=" else -1.0
        A_full = np.hstack([A_s, S])
        flip = np.where(b_s < 0, -1.0, 1.0)
        A_full = A_full * flip[:, None]
        b_full = b_s * flip

        # initial basis: a +1 slack where available, otherwise an artificial
        basis0: list[int] = [-1] * m
        for k, i in enumerate(slack_rows):
            if A_full[i, nstruct + k] == 1.0:
                basis0[i] = nstruct + k
        art_rows = [i for i in range(m) if basis0[i] < 0]
        n_real = A_full.shape[1]
        Art = np.zeros((m, len(art_rows)))
        for k, i in enumerate(art_rows):
            Art[i, k] = 1.0
            basis0[i] = n_real + k
        self._A = np.hstack([A_full, Art])
        self._b = b_full
        self._n_real = n_real
        self._n_art = len(art_rows)
        self._basis0 = basis0
        self._T = T
        self._offset = offset
        self._flip = flip
        self._m_user = m0
        self._nstruct = nstruct
        sign = 1.0 if p.sense == "min" else -1.0
        self._sign = sign
        c_s = np.zeros(self._A.shape[1])
        c_s[:nstruct] = sign * (T.T @ p.c)
        self._c = c_s
        self._c_const = sign * float(p.c @ offset)

    def _independent_rows(self, A: np.ndarray, b: np.ndarray, rel: list[str]) -> tuple[np.ndarray, bool]:
        """Drop linearly dependent equality rows; flag inconsistent right-hand sides.

        Inequality rows get their own slack column and never cause rank loss.
        Dual values of dropped rows are reported as zero, which leaves a valid
        dual solution because each dropped row is a combination of kept ones.
        """
        eq = np.array([i for i, r in enumerate(rel) if r == "="], dtype=int)
        every = np.arange(A.shape[0])
        if eq.size == 0:
            return every, False
        Aeq = A[eq]
        scale = float(np.abs(Aeq).max(initial=0.0))
        if scale == 0.0:
            bad = bool(np.any(np.abs(b[eq]) > self.tol.feasibility))
            return np.setdiff1d(every, eq), bad
        _, R, piv = qr(Aeq.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-10 * diag[0]))
        if rank == eq.size:
            return every, False
        indep, dep = eq[np.sort(piv[:rank])], eq[np.sort(piv[rank:])]
        coef, *_ = np.linalg.lstsq(A[indep].T, A[dep].T, rcond=None)
        resid = b[dep] - coef.T @ b[indep]
        bscale = max(1.0, float(np.abs(b).max(initial=0.0)))
        bad = bool(np.any(np.abs(resid) > self.tol.feasibility * bscale))
        return np.setdiff1d(every, dep), bad

    # -- core iterations --------------------------------------------------

    def _refactor(self, basis: list[int]) -> np.ndarray:
        B = self._A[:, basis]
        try:
            return np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise LpSolverError(f"singular basis during refactorization (m={len(basis)})") from exc

    def _iterate(
        self, c: np.ndarray, basis: list[int], Binv: np.ndarray, allowed: np.ndarray, perturb: bool = False
    ) -> tuple[str, list[int], np.ndarray, int]:
        """Primal simplex from a feasible basis.  Returns (status, basis, Binv, pivots).

        With ``perturb`` the basic values are lifted by tiny positive amounts
        before pivoting, which breaks ties in the ratio test on degenerate
        vertices.  The caller restores the true right-hand side afterwards.
        """
        A, b, tol = self._A, self._b, self.tol
        m, n = A.shape
        xB = Binv @ b
        if perturb and m:
            rng = np.random.default_rng(m * 7919 + n)
            bscale = max(1.0, float(np.abs(b).max(initial=0.0)))
            xB = np.maximum(xB, 0.0) + _PERTURB * bscale * rng.uniform(0.5, 1.0, m)
            b = A[:, basis] @ xB
        degenerate = 0
        bland = False
        max_pivots = 50 * (m + n) + 1000
        since_refactor = 0
        in_basis = np.zeros(n, dtype=bool)
        in_basis[basis] = True
        skip = np.zeros(n, dtype=bool)
        cscale = max(1.0, float(np.max(np.abs(c))) if c.size else 1.0)
        opt_tol = tol.optimality * cscale
        for it in range(max_pivots):
            y = c[basis] @ Binv
            d = c - y @ A
            d[in_basis | ~allowed | skip] = 0.0
            if bland:
                cand = np.flatnonzero(d < -opt_tol)
                if cand.size == 0:
                    return OPTIMAL, basis, Binv, it
                q = int(cand[0])
            else:
                q = int(np.argmin(d))
                if d[q] >= -opt_tol:
                    return OPTIMAL, basis, Binv, it
            u = Binv @ A[:, q]
            pos = u > max(tol.pivot, 1e-7 * float(np.abs(u).max()))
            if not np.any(pos):
                # no stable pivot and a reduced cost at rounding level: the
                # column cannot improve the objective, drop it until the next pivot
                if -d[q] <= _NOISE * cscale * max(1.0, float(np.abs(u).max(initial=0.0))):
                    skip[q] = True
                    continue
                return UNBOUNDED, basis, Binv, it
            skip[:] = False
            ratios = np.full(m, np.inf)
            ratios[pos] = np.maximum(xB[pos], 0.0) / u[pos]
            if bland:
                theta = ratios.min()
                ties = np.flatnonzero(ratios <= theta + 1e-12 * max(1.0, theta))
                r = int(ties[np.argmin(np.asarray(basis)[ties])])
            else:
                # Harris two-pass test: among rows blocking within a small
                # feasibility slack, pivot on the largest entry for stability
                relaxed = np.full(m, np.inf)
                relaxed[pos] = (np.maximum(xB[pos], 0.0) + tol.feasibility * 0.1) / u[pos]
                ties = np.flatnonzero(ratios <= relaxed.min())
                r = int(ties[np.argmax(u[ties])])
                theta = ratios[r]
            # a pivot is degenerate when it does not measurably improve the
            # objective; the count is cumulative so slow stalls also trip it
            if theta * -d[q] <= 1e-12 * cscale:
                degenerate += 1
                if degenerate > 10 * (m + n):
                    bland = True
            # eta update of the basis inverse
            piv = u[r]
            row_r = Binv[r] / piv
            Binv -= np.outer(u, row_r)
            Binv[r] = row_r
            in_basis[basis[r]] = False
            basis[r] = q
            in_basis[q] = True
            since_refactor += 1
            if since_refactor >= _REFACTOR_EVERY:
                Binv = self._refactor(basis)
                since_refactor = 0
                xB = Binv @ b
            else:
                xB = xB - theta * u
                xB[r] = theta
            np.maximum(xB, 0.0, out=xB)
        raise LpSolverError(f"pivot limit {max_pivots} exceeded (m={m}, n={n}); anti-cycling exhausted")

    def _phase1(self) -> bool:
        m, n = self._A.shape
        basis = list(self._basis0)
        Binv = np.eye(m)  # initial basis columns are unit vectors
        if self._n_art == 0:
            self._basis, self._Binv = basis, Binv
            return True
        c1 = np.zeros(n)
        c1[self._n_real:] = 1.0
        allowed = np.ones(n, dtype=bool)
        scale = max(1.0, float(np.abs(self._b).max(initial=0.0)))
        # A perturbed pass avoids stalling on degenerate vertices.  Its basis
        # is kept only if it is feasible for the true right-hand side; any
        # other outcome is settled by the exact pass.
        accepted = False
        try:
            status, pb, pBinv, _ = self._iterate(c1, list(basis), Binv.copy(), allowed, perturb=True)
            if status == OPTIMAL:
                pBinv = self._refactor(pb)
                xB = pBinv @ self._b
                accepted = bool(
                    xB.min() >= -self.tol.feasibility * scale
                    and float(c1[pb] @ np.abs(xB)) <= self.tol.phase1 * scale
                )
        except LpSolverError:
            pass
        if accepted:
            basis, Binv = pb, pBinv
        else:
            status, basis, Binv, _ = self._iterate(c1, basis, Binv, allowed)
            if status != OPTIMAL:
                raise LpSolverError("phase 1 did not terminate at an optimum")
            Binv = self._refactor(basis)
            xB = Binv @ self._b
            if float(c1[basis] @ xB) > self.tol.phase1 * scale:
                return False
        # drive zero-level artificials out of the basis where possible
        for r in range(m):
            if basis[r] < self._n_real:
                continue
            row = Binv[r] @ self._A[:, : self._n_real]
            in_b = np.zeros(self._n_real, dtype=bool)
            real_basic = [k for k in basis if k < self._n_real]
            in_b[real_basic] = True
            row[in_b] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > 1e-9:
                basis[r] = j
                Binv = self._refactor(basis)
            # otherwise the row is redundant; the artificial stays basic at zero
        self._basis, self._Binv = basis, Binv
        return True

    def _finish(self, status: str, pivots: int) -> LpSolution:
        p = self.problem
        if status != OPTIMAL:
            return LpSolution(status=status, iterations=pivots)
        basis, Binv = self._basis, self._Binv
        xB = Binv @ self._b
        x_std = np.zeros(self._A.shape[1])
        x_std[basis] = np.maximum(xB, 0.0)
        x = self._offset + self._T @ x_std[: self._nstruct]
        y_std = self._c[basis] @ Binv
        y_all = np.zeros(self._rows_before)
        y_all[self._kept] = y_std * self._flip * self._sign
        duals = y_all[: self._m_user]
        reduced = p.c - p.A.T @ duals
        obj = float(p.c @ x)
        # dual objective including the bound terms of variables fixed at bounds
        near_lower = np.isfinite(p.lower) & (np.abs(x - p.lower) <= np.abs(x - p.upper))
        at = np.where(near_lower, p.lower, p.upper)
        use = (reduced != 0) & np.isfinite(at)
        bound_part = float(reduced[use] @ at[use])
        dual_obj = float(p.b @ duals) + bound_part
        return LpSolution(
            status=OPTIMAL,
            x=x,
            objective=obj,
            duals=duals,
            reduced_costs=reduced,
            iterations=pivots,
            dual_objective=dual_obj,
            basis=list(basis),
        )

    def _phase2(self, c_std: np.ndarray) -> LpSolution:
        allowed = np.ones(self._A.shape[1], dtype=bool)
        allowed[self._n_real:] = False
        status, basis, Binv, pivots = self._iterate(c_std, list(self._basis), self._Binv.copy(), allowed, perturb=True)
        if status == OPTIMAL:
            Binv = self._refactor(basis)
            basis, Binv, extra = self._dual_cleanup(c_std, basis, Binv, allowed)
            Binv = self._refactor(basis)
            pivots += extra
            self._basis, self._Binv = basis, Binv
            self._check_feasible()
        return self._finish(status, pivots)

    def _dual_cleanup(
        self, c: np.ndarray, basis: list[int], Binv: np.ndarray, allowed: np.ndarray
    ) -> tuple[list[int], np.ndarray, int]:
        """Dual simplex pivots that repair basic values left negative by the perturbation."""
        A, b, tol = self._A, self._b, self.tol
        m, n = A.shape
        scale = max(1.0, float(np.abs(b).max(initial=0.0)))
        in_basis = np.zeros(n, dtype=bool)
        in_basis[basis] = True
        since_refactor = 0
        for it in range(10 * (m + n) + 100):
            xB = Binv @ b
            r = int(np.argmin(xB)) if m else 0
            if m == 0 or xB[r] >= -tol.feasibility * scale:
                return basis, Binv, it
            row = Binv[r] @ A
            d = c - (c[basis] @ Binv) @ A
            cand = np.flatnonzero(allowed & ~in_basis & (row < -tol.pivot))
            if cand.size == 0:
                raise LpSolverError("dual cleanup found no entering column")
            ratios = np.maximum(d[cand], 0.0) / -row[cand]
            best = ratios.min()
            ties = cand[ratios <= best + 1e-12 * max(1.0, best)]
            q = int(ties[np.argmax(-row[ties])])
            u = Binv @ A[:, q]
            row_r = Binv[r] / u[r]
            Binv -= np.outer(u, row_r)
            Binv[r] = row_r
            in_basis[basis[r]] = False
            basis[r] = q
            in_basis[q] = True
            since_refactor += 1
            if since_refactor >= _REFACTOR_EVERY:
                Binv = self._refactor(basis)
                since_refactor = 0
        raise LpSolverError("dual cleanup did not restore feasibility")

    def _check_feasible(self) -> None:
        xB = self._Binv @ self._b
        scale = max(1.0, float(np.abs(self._b).max(initial=0.0)))
        if xB.size and xB.min() < -self.tol.feasibility * scale:
            raise LpSolverError(f"basis lost primal feasibility (min basic value {xB.min():.3e})")

    # -- public -----------------------------------------------------------

    def solve(self) -> LpSolution:
        if self._inconsistent:
            return LpSolution(status=INFEASIBLE)
        if self._feasible is None:
            self._feasible = self._phase1()
        if not self._feasible:
            return LpSolution(status=INFEASIBLE)
        return self._phase2(self._c)

    def reoptimize(self, c: np.ndarray) -> LpSolution:
        """Solve again with cost vector ``c`` (user space, same sense)."""
        c = np.asarray(c, dtype=float).ravel()
        if c.size != self.problem.c.size:
            raise ValueError("cost vector has the wrong length")
        self.problem.c = c
        c_std = np.zeros(self._A.shape[1])
        c_std[: self._nstruct] = self._sign * (self._T.T @ c)
        self._c = c_std
        self._c_const = self._sign * float(c @ self._offset)
        return self.solve()


def solve(problem: LpProblem, tol: ToleranceSet | None = None, backend: str = "simplex") -> LpSolution:
    """Solve ``problem`` from scratch.

    ``backend="highs"`` hands the problem to scipy's HiGHS instead of the
    dense simplex.  It is meant for the larger, badly conditioned master
    problems, where an explicit basis inverse loses too many digits.
    """
    if backend == "simplex":
        return Simplex(problem, tol).solve()
    if backend == "highs":
        return _solve_highs(problem)
    raise ValueError(f"unknown LP backend {backend!r}")


def _solve_highs(problem: LpProblem) -> LpSolution:
    from scipy.optimize import linprog

    p = problem
    sign = 1.0 if p.sense == "min" else -1.0
    rel = np.asarray(p.relations)
    eq, le, ge = rel == "=", rel == "<=", rel == ">="
    A_ub = np.vstack([p.A[le], -p.A[ge]])
    b_ub = np.concatenate([p.b[le], -p.b[ge]])
    res = linprog(
        sign * p.c,
        A_ub=A_ub if A_ub.size else None,
        b_ub=b_ub if A_ub.size else None,
        A_eq=p.A[eq] if eq.any() else None,
        b_eq=p.b[eq] if eq.any() else None,
        bounds=[(lo, None if np.isinf(up) else up) if np.isfinite(lo) else (None, None if np.isinf(up) else up)
                for lo, up in zip(p.lower, p.upper)],
        method="highs",
    )
    if res.status == 2:
        return LpSolution(status=INFEASIBLE, iterations=int(res.nit))
    if res.status == 3:
        return LpSolution(status=UNBOUNDED, iterations=int(res.nit))
    if res.status != 0:
        raise LpSolverError(f"HiGHS failed: {res.message}")
    y = np.zeros(p.b.size)
    if eq.any():
        y[eq] = sign * res.eqlin.marginals
    n_le = int(le.sum())
    if A_ub.size:
        y[le] = sign * res.ineqlin.marginals[:n_le]
        y[ge] = -sign * res.ineqlin.marginals[n_le:]
    x = np.asarray(res.x, dtype=float)
    return LpSolution(
        status=OPTIMAL,
        x=x,
        objective=float(p.c @ x),
        duals=y,
        reduced_costs=p.c - p.A.T @ y,
        iterations=int(res.nit),
        dual_objective=float(p.b @ y),
    )


def dump_problem_csv(problem: LpProblem) -> str:
    """Serialize an LP as CSV blocks (``# costs``, ``# matrix``, ``# rhs``)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"# sense={problem.sense}"])
    w.writerow(["# costs"])
    w.writerow([repr(float(v)) for v in problem.c])
    w.writerow(["# matrix"])
    for row in problem.A:
        w.writerow([repr(float(v)) for v in row])
    w.writerow(["# rhs"])
    for rel, rhs in zip(problem.relations, problem.b):
        w.writerow([rel, repr(float(rhs))])
    w.writerow(["# bounds"])
    for lo, up in zip(problem.lower, problem.upper):
        w.writerow([repr(float(lo)), repr(float(up))])
    return buf.getvalue()
