"""Two-date target payoffs c(S_t1, S_T), evaluated as black boxes on atom grids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Payoff:
    name: str
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz: float
    strike: float | None = None

    def __call__(self, x, y):
        return self.func(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def grid(self, x_atoms: np.ndarray, y_atoms: np.ndarray) -> np.ndarray:
        """Cost matrix c[i, j] = c(x_i, y_j)."""
        X, Y = np.meshgrid(x_atoms, y_atoms, indexing="ij")
        return np.asarray(self(X, Y), dtype=float)

    def scaled(self, factor: float) -> "Payoff":
        f = self.func
        return Payoff(f"{factor!r}*{self.name}", lambda x, y: factor * f(x, y), abs(factor) * self.lipschitz, self.strike)


def asian(strike: float = 1.0) -> Payoff:
    """((x + y) / 2 - K)^+."""
    return Payoff("asian", lambda x, y: np.maximum(0.5 * (x + y) - strike, 0.0), 0.5, strike)


def forward_start() -> Payoff:
    """(y - x)^+."""
    return Payoff("forward_start", lambda x, y: np.maximum(y - x, 0.0), 1.0)


def call_on_first(strike: float) -> Payoff:
    """(x - K)^+, a claim replicable by one t1 call."""
    return Payoff("call_t1", lambda x, y: np.maximum(x - strike, 0.0) + 0.0 * y, 1.0, strike)


def constant(value: float) -> Payoff:
    return Payoff("constant", lambda x, y: np.full(np.broadcast(x, y).shape, float(value)), 0.0)


def from_table(x_knots: np.ndarray, y_knots: np.ndarray, values: np.ndarray, name: str = "custom") -> Payoff:
    """Bilinear interpolation of a payoff tabulated on a grid (flat outside)."""
    from scipy.interpolate import RegularGridInterpolator

    xk = np.asarray(x_knots, dtype=float)
    yk = np.asarray(y_knots, dtype=float)
    vals = np.asarray(values, dtype=float)
    interp = RegularGridInterpolator((xk, yk), vals, method="linear", bounds_error=False, fill_value=None)

    def f(x, y):
        x, y = np.broadcast_arrays(x, y)
        pts = np.stack([np.clip(x, xk[0], xk[-1]), np.clip(y, yk[0], yk[-1])], axis=-1)
        return interp(pts.reshape(-1, 2)).reshape(x.shape)

    lip_x = np.max(np.abs(np.diff(vals, axis=0)) / np.diff(xk)[:, None]) if xk.size > 1 else 0.0
    lip_y = np.max(np.abs(np.diff(vals, axis=1)) / np.diff(yk)[None, :]) if yk.size > 1 else 0.0
    return Payoff(name, f, float(lip_x + lip_y))


def by_name(name: str, strike: float = 1.0) -> Payoff:
    if name == "asian":
        return asian(strike)
    if name == "forward_start":
        return forward_start()
    raise KeyError(f"unknown payoff id {name!r}")
