"""Discrete risk-neutral marginals consistent with finitely many call quotes.

``build_bounded`` reads masses off the kinks of the linearly interpolated
call price function.  ``build_unbounded_pair`` handles quotes whose last
price is still positive: each curve's last segment is continued to its
zero, and the later maturity is continued to the farther of the two zeros
when that is needed to keep the pair in convex order.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .quotes import QuoteCurve, QuoteSurface, extrapolation_zero

MASS_DUST = 1e-12
MASS_TOL = 1e-10
ORDER_TOL = 1e-10


class MarginalError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure on [0, inf)."""

    atoms: np.ndarray
    masses: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.atoms, dtype=float).ravel()
        m = np.asarray(self.masses, dtype=float).ravel()
        if a.size != m.size or a.size == 0:
            raise MarginalError("atoms and masses must be non-empty and of equal length")
        if np.any(np.diff(a) <= 0) or a[0] < 0:
            raise MarginalError("atoms must be strictly increasing and nonnegative")
        if np.any(m < -MASS_DUST):
            raise MarginalError(f"negative mass {m.min()!r}")
        m = np.where(m < 0, 0.0, m)
        if abs(m.sum() - 1.0) > MASS_TOL:
            raise MarginalError(f"masses sum to {m.sum()!r}, not 1")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "masses", m)

    @classmethod
    def from_masses(cls, atoms: Sequence[float], masses: Sequence[float]) -> "DiscreteMeasure":
        """Drop atoms whose mass is numerical dust (|m| < 1e-12)."""
        a = np.asarray(atoms, dtype=float)
        m = np.asarray(masses, dtype=float)
        keep = np.abs(m) >= MASS_DUST
        return cls(a[keep], m[keep])

    def __len__(self) -> int:
        return self.atoms.size

    @property
    def mean(self) -> float:
        return float(self.atoms @ self.masses)

    def call(self, k: float | np.ndarray) -> float | np.ndarray:
        """E (X - k)^+."""
        kk = np.asarray(k, dtype=float)
        out = np.maximum(self.atoms[None, :] - kk.reshape(-1, 1), 0.0) @ self.masses
        return float(out[0]) if kk.ndim == 0 else out.reshape(kk.shape)

    def cdf(self, t: float | np.ndarray) -> float | np.ndarray:
        tt = np.asarray(t, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        out = cum[np.searchsorted(self.atoms, tt, side="right")]
        return float(out) if tt.ndim == 0 else out


def _masses_from_slopes(slopes: np.ndarray) -> np.ndarray:
    """Kink sizes of a piecewise-linear call function.

    ``slopes`` lists the slopes left of the first knot (-1), between knots,
    and right of the last knot, so the result has ``len(slopes) - 1`` entries.
    """
    return np.diff(slopes)


def build_bounded(curve: QuoteCurve) -> DiscreteMeasure:
    """Discrete measure whose call function is the interpolated quote curve.

    Requires the last quoted price to be zero (compact support).
    """
    k, c = curve.strikes, curve.prices
    if c[-1] > 0:
        raise MarginalError("last quoted price is positive; use build_unbounded_pair")
    slopes = np.concatenate([[-1.0], np.diff(c) / np.diff(k), [0.0]])
    return DiscreteMeasure.from_masses(k, _masses_from_slopes(slopes))


def _extended_measure(curve: QuoteCurve, zero: float, straight: bool) -> DiscreteMeasure:
    """Interpolated curve continued linearly from the last knot to ``zero``.

    ``straight`` marks a continuation along the last quoted segment, which
    leaves no kink (hence no mass) at the last knot.
    """
    k, c = curve.strikes, curve.prices
    inner = np.diff(c) / np.diff(k)
    if c[-1] <= 0.0 or zero <= k[-1]:
        slopes = np.concatenate([[-1.0], inner, [0.0]])
        return DiscreteMeasure.from_masses(k, _masses_from_slopes(slopes))
    tail = inner[-1] if straight else -c[-1] / (zero - k[-1])
    slopes = np.concatenate([[-1.0], inner, [tail, 0.0]])
    return DiscreteMeasure.from_masses(np.append(k, zero), _masses_from_slopes(slopes))


def build_unbounded_pair(surface: QuoteSurface) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Marginals for both maturities when the quotes may not reach zero.

    The earlier curve is continued to its own zero.  The later curve is
    continued to its own zero if that lies at or beyond the earlier one's,
    otherwise to the earlier one's zero, so that the pair stays in convex
    order.
    """
    z_mu = extrapolation_zero(surface.curve_t1)
    z_nu = extrapolation_zero(surface.curve_T)
    mu = _extended_measure(surface.curve_t1, z_mu, straight=True)
    if z_mu <= z_nu:
        nu = _extended_measure(surface.curve_T, z_nu, straight=True)
    else:
        nu = _extended_measure(surface.curve_T, z_mu, straight=False)
    return mu, nu


def check_convex_order(mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = ORDER_TOL) -> bool:
    """``mu <=_c nu`` for two measures with equal means."""
    if abs(mu.mean - nu.mean) > MASS_TOL:
        raise MarginalError(f"means differ ({mu.mean!r} vs {nu.mean!r}); convex order needs equal means")
    ks = np.union1d(mu.atoms, nu.atoms)
    return bool(np.all(mu.call(ks) <= nu.call(ks) + tol))


def wasserstein(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Order-1 Wasserstein distance: integral of |F_mu - F_nu|."""
    pts = np.union1d(mu.atoms, nu.atoms)
    gap = np.abs(mu.cdf(pts[:-1]) - nu.cdf(pts[:-1]))
    return float(gap @ np.diff(pts))


def wasserstein_to_continuous(
    call: Callable[[float], float],
    cdf: Callable[[float], float],
    measure: DiscreteMeasure,
) -> float:
    """W(true, measure) for a true law on [0, inf) given by its call function and CDF.

    On each interval where the discrete CDF is a constant ``q`` the integral
    of ``|F - q|`` is evaluated exactly through ``int_a^t F = (t - a) + C(t) - C(a)``,
    splitting at the point where ``F`` crosses ``q``.  The tail beyond the last
    atom contributes ``C(last atom)``.
    """

    def int_f(a: float, b: float) -> float:
        return (b - a) + call(b) - call(a)

    total = 0.0
    edges = np.concatenate([[0.0], measure.atoms]) if measure.atoms[0] > 0 else measure.atoms
    for a, b in zip(edges[:-1], edges[1:]):
        q = float(measure.cdf(a))
        fa, fb = cdf(a), cdf(b)
        if fb <= q:
            total += q * (b - a) - int_f(a, b)
        elif fa >= q:
            total += int_f(a, b) - q * (b - a)
        else:
            t = brentq(lambda s: cdf(s) - q, a, b, xtol=1e-14, rtol=1e-14)
            total += q * (t - a) - int_f(a, t) + int_f(t, b) - q * (b - t)
    return float(total + call(float(measure.atoms[-1])))


@dataclass(frozen=True)
class WassersteinBoundReport:
    distance: float
    bound: float
    components: dict[str, float] = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.distance <= self.bound + 1e-8


@dataclass(frozen=True)
class TrueMarginal:
    """Evaluable call function and CDF of a model marginal."""

    call: Callable[[float], float]
    cdf: Callable[[float], float]


def dyadic_grid(n: int) -> np.ndarray:
    """Strikes j / 2^n for j = 0..4^n (spacing 2^-n up to 2^n)."""
    return np.arange(4**n + 1) / 2.0**n


def _is_uniform(grid: np.ndarray) -> bool:
    d = np.diff(grid)
    return bool(np.allclose(d, d[0], rtol=0, atol=1e-12))


def wasserstein_bound_unbounded(
    true_t1: TrueMarginal,
    true_T: TrueMarginal,
    grid: np.ndarray | int,
    spot: float = 1.0,
) -> tuple[WassersteinBoundReport, WassersteinBoundReport]:
    """Actual vs. theoretical Wasserstein error of the unbounded-support scheme.

    ``grid`` is either a strike array starting at 0 or a refinement level n,
    meaning the dyadic grid ``j / 2^n``.  For non-dyadic grids the ``1/2^n``
    factor is replaced by the largest strike spacing and the reference strike
    is the last quoted one.
    """
    if isinstance(grid, (int, np.integer)):
        level = int(grid)
        grid = dyadic_grid(level)
    grid = np.asarray(grid, dtype=float)
    mesh = float(np.max(np.diff(grid)))
    curves = [
        QuoteCurve(mat, grid, np.array([spot if k == 0 else m.call(k) for k in grid]), spot)
        for mat, m in ((0.0, true_t1), (1.0, true_T))
    ]
    surface = QuoteSurface(*curves)
    mu_n, nu_n = build_unbounded_pair(surface)
    z_mu = extrapolation_zero(surface.curve_t1)
    z_nu = extrapolation_zero(surface.curve_T)
    k_ref = float(grid[-1])

    w_mu = wasserstein_to_continuous(true_t1.call, true_t1.cdf, mu_n)
    w_nu = wasserstein_to_continuous(true_T.call, true_T.cdf, nu_n)

    f_mu = true_t1.cdf(k_ref)
    mu_terms = {"mesh_term": f_mu * mesh, "tail_term": 2.0 * true_t1.call(z_mu)}

    f_nu = true_T.cdf(k_ref)
    h_nu = 1.0 if f_nu >= float(nu_n.cdf(k_ref)) else 0.0
    k_star = max(z_nu, z_mu)
    c_star = true_T.call(k_star)
    case2 = z_mu > z_nu

    def dcall(k: float) -> float:
        return true_T.cdf(k) - 1.0  # right derivative of the call function

    nu_terms = {
        "mesh_term": f_nu * mesh,
        "tail_term": c_star,
        "tail_term_2": c_star * ((0.0 if case2 else 1.0) + (h_nu if case2 else 0.0)),
        "slope_term": ((z_mu - k_ref) * (dcall(z_mu) - dcall(k_ref)) * (1.0 - h_nu)) if case2 else 0.0,
    }
    meta = {"dyadic": float(_is_uniform(grid) and np.log2(1.0 / mesh).is_integer()), "mesh": mesh}
    return (
        WassersteinBoundReport(w_mu, float(sum(mu_terms.values())), {**mu_terms, **meta, "zero": z_mu}),
        WassersteinBoundReport(w_nu, float(sum(nu_terms.values())), {**nu_terms, **meta, "zero": z_nu, "h_nu": h_nu}),
    )


@dataclass(frozen=True)
class ConvergenceRow:
    points: int
    w_mu: float
    w_nu: float
    value: float
    bound: float
    passed: bool


def convergence_study(
    model,
    payoff,
    instrument_strikes: Sequence[float],
    levels: Sequence[int],
    *,
    t1: float = 0.5,
    T: float = 1.0,
    k_max: float = 2.0,
    w_max: float = 100.0,
    grid_for: Callable[[int], np.ndarray] | None = None,
    tol: float = 1e-7,
) -> list[ConvergenceRow]:
    """Time-T min-max value across grid refinements versus the Lipschitz bound.

    The finest level stands in for the unknown continuous value.  The bound
    constant is 19 * Lambda_w with Lambda_w = Lip(payoff) + (number of
    non-cash weights) * w_max, the worst case over the weight box.
    """
    from .hedge import InstrumentSet, minmax_hedge
    from .models import true_marginal

    grid_for = grid_for or (lambda n: np.linspace(0.0, k_max, n))
    inst = InstrumentSet(strikes=tuple(instrument_strikes))
    lam_w = payoff.lipschitz + (inst.size - 1) * w_max
    B = 19.0 * lam_w
    rows = []
    m1, m2 = true_marginal(model, t1), true_marginal(model, T)
    for n in levels:
        grid = grid_for(n)
        surface = model.quote_surface(grid, t1, T)
        mu, nu = build_unbounded_pair(surface)
        res = minmax_hedge(inst, mu, nu, payoff, horizon="T", w_box=w_max, tol=tol)
        rows.append((n, wasserstein_to_continuous(m1.call, m1.cdf, mu), wasserstein_to_continuous(m2.call, m2.cdf, nu), res.value))
    finest = rows[int(np.argmax([r[0] for r in rows]))][3]
    out = []
    for n, wm, wn, v in rows:
        bound = B * (wm + wn)
        out.append(ConvergenceRow(n, wm, wn, v, bound, abs(v - finest) <= bound + 1e-12))
    return out


def write_measure_csv(measure: DiscreteMeasure) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["atom", "mass"])
    for a, m in zip(measure.atoms, measure.masses):
        w.writerow([repr(float(a)), repr(float(m))])
    return buf.getvalue()


def read_measure_csv(text: str) -> DiscreteMeasure:
    rows = list(csv.DictReader(io.StringIO(text)))
    return DiscreteMeasure([float(r["atom"]) for r in rows], [float(r["mass"]) for r in rows])
