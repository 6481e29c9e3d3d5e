"""Vanilla call quotes for the two hedging dates: validation, interpolation, I/O."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

QUOTE_SLACK = 1e-10


class QuoteError(ValueError):
    """Structurally malformed quote data (no validation report possible)."""


@dataclass(frozen=True)
class QuoteCurve:
    maturity: float
    strikes: np.ndarray
    prices: np.ndarray
    spot: float

    def __post_init__(self) -> None:
        k = np.asarray(self.strikes, dtype=float).ravel()
        c = np.asarray(self.prices, dtype=float).ravel()
        object.__setattr__(self, "strikes", k)
        object.__setattr__(self, "prices", c)
        if k.size != c.size:
            raise QuoteError(f"{k.size} strikes but {c.size} prices")
        if k.size < 2:
            raise QuoteError("need at least two quotes per maturity")
        if np.any(np.diff(k) <= 0):
            raise QuoteError("strikes must be strictly increasing")
        if k[0] != 0.0:
            raise QuoteError("the first strike must be 0 (it carries the spot)")
        if not self.spot > 0:
            raise QuoteError("spot must be positive")

    def __len__(self) -> int:
        return self.strikes.size


@dataclass(frozen=True)
class QuoteSurface:
    curve_t1: QuoteCurve
    curve_T: QuoteCurve

    def __post_init__(self) -> None:
        if not np.array_equal(self.curve_t1.strikes, self.curve_T.strikes):
            raise QuoteError("both maturities must be quoted on the same strike grid")

    @property
    def strikes(self) -> np.ndarray:
        return self.curve_t1.strikes

    @property
    def spot(self) -> float:
        return self.curve_t1.spot


@dataclass(frozen=True)
class Violation:
    rule: str
    index: int
    detail: str

    def __str__(self) -> str:
        return f"{self.rule}[{self.index}]: {self.detail}"


def _curve_violations(curve: QuoteCurve, label: str) -> list[Violation]:
    out: list[Violation] = []
    k, c, s0 = curve.strikes, curve.prices, curve.spot
    if abs(c[0] - s0) > QUOTE_SLACK:
        out.append(Violation(f"{label}.spot_normalization", 0, f"price at strike 0 is {c[0]!r}, spot is {s0!r}"))
    for j in range(k.size):
        if c[j] < -QUOTE_SLACK:
            out.append(Violation(f"{label}.nonnegative", j, f"price {c[j]!r} < 0"))
        if c[j] < max(s0 - k[j], 0.0) - QUOTE_SLACK:
            out.append(Violation(f"{label}.intrinsic_bound", j, f"price {c[j]!r} below (S0-K)+"))
    for j in range(1, k.size):
        if c[j] > c[j - 1] + QUOTE_SLACK:
            out.append(Violation(f"{label}.monotonicity", j, f"price {c[j]!r} > previous {c[j - 1]!r}"))
    slopes = np.diff(c) / np.diff(k)
    for j, s in enumerate(slopes):
        if s < -1.0 - QUOTE_SLACK:
            out.append(Violation(f"{label}.slope_bound", j + 1, f"slope {s!r} < -1"))
    for j in range(1, slopes.size):
        if slopes[j] < slopes[j - 1] - QUOTE_SLACK:
            out.append(Violation(f"{label}.convexity", j, f"slope decreases at strike {k[j]!r}"))
    return out


def validate_quotes(surface: QuoteSurface) -> list[Violation]:
    """Every violated no-arbitrage invariant, with the offending index.

    An empty list means the surface is usable for marginal construction.
    """
    a, b = surface.curve_t1, surface.curve_T
    if len(a) != len(b):
        raise QuoteError("maturities have different numbers of quotes")
    out = _curve_violations(a, "t1") + _curve_violations(b, "T")
    if not a.maturity < b.maturity:
        out.append(Violation("maturity_order", 0, f"t1={a.maturity!r} is not before T={b.maturity!r}"))
    if a.spot != b.spot:
        out.append(Violation("spot_mismatch", 0, f"{a.spot!r} != {b.spot!r}"))
    for j in range(len(a)):
        if a.prices[j] > b.prices[j] + QUOTE_SLACK:
            out.append(Violation("calendar", j, f"C_t1={a.prices[j]!r} > C_T={b.prices[j]!r}"))
    return out


def interpolate_call(curve: QuoteCurve, k: float | np.ndarray) -> float | np.ndarray:
    """Linear interpolation of the quoted call prices inside the quoted range."""
    kk = np.asarray(k, dtype=float)
    if np.any(kk < 0) or np.any(kk > curve.strikes[-1]):
        raise ValueError(f"strike outside [0, {curve.strikes[-1]!r}]; use extrapolation_zero beyond the grid")
    out = np.interp(kk, curve.strikes, curve.prices)
    return float(out) if out.ndim == 0 else out


def extrapolation_zero(curve: QuoteCurve) -> float:
    """Where the last quoted segment, continued to the right, hits zero."""
    k, c = curve.strikes, curve.prices
    if c[-1] <= 0.0:
        return float(k[-1])
    slope = (c[-1] - c[-2]) / (k[-1] - k[-2])
    if slope >= 0.0:
        raise ValueError("no finite extrapolated zero: last quoted segment is not decreasing")
    return float(k[-1] - c[-1] / slope)


def quotes_from_function(call, strikes: Sequence[float], t1: float, T: float, spot: float) -> QuoteSurface:
    """Build a surface from ``call(strike, maturity)``; strike 0 carries the spot."""
    k = np.asarray(strikes, dtype=float)
    c1 = np.array([spot if kj == 0 else call(kj, t1) for kj in k])
    c2 = np.array([spot if kj == 0 else call(kj, T) for kj in k])
    return QuoteSurface(QuoteCurve(t1, k, c1, spot), QuoteCurve(T, k, c2, spot))


def write_quotes_csv(surface: QuoteSurface) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["maturity", "strike", "price"])
    for curve in (surface.curve_t1, surface.curve_T):
        for k, c in zip(curve.strikes, curve.prices):
            w.writerow([repr(float(curve.maturity)), repr(float(k)), repr(float(c))])
    return buf.getvalue()


def read_quotes_csv(text: str) -> QuoteSurface:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or set(rows[0]) != {"maturity", "strike", "price"}:
        raise QuoteError("quote file needs header maturity,strike,price")
    by_mat: dict[float, list[tuple[float, float]]] = {}
    for r in rows:
        by_mat.setdefault(float(r["maturity"]), []).append((float(r["strike"]), float(r["price"])))
    if len(by_mat) != 2:
        raise QuoteError(f"expected two maturities, found {len(by_mat)}")
    curves = []
    for mat in sorted(by_mat):
        pts = sorted(by_mat[mat])
        k = np.array([p[0] for p in pts])
        c = np.array([p[1] for p in pts])
        if k[0] != 0.0:
            raise QuoteError("each maturity needs a strike-0 row carrying the spot")
        curves.append(QuoteCurve(mat, k, c, float(c[0])))
    return QuoteSurface(curves[0], curves[1])
