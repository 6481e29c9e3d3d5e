"""Black-Scholes and Merton jump-diffusion reference dynamics.

Used to generate synthetic quotes, simulate stock paths, and value the
target option and the hedge portfolio along those paths.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm, poisson

from .marginals import TrueMarginal
from .payoffs import Payoff
from .quotes import QuoteCurve, QuoteSurface

_BLOCK = 4096  # paths per random substream
_SERIES_TAIL = 1e-12


def bs_call(S, K, sigma, r, tau):
    """Black-Scholes call price, vectorized over all arguments."""
    S, K, sigma, r, tau = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (S, K, sigma, r, tau)))
    shape = S.shape
    S, K, sigma, r, tau = (np.atleast_1d(v) for v in (S, K, sigma, r, tau))
    if np.any(tau < 0):
        raise ValueError("negative time to maturity")
    disc = np.exp(-r * tau)
    intrinsic = np.maximum(S - K * disc, 0.0)
    out = intrinsic.copy()
    vol = sigma * np.sqrt(tau)
    live = (vol > 0) & (K > 0) & (S > 0)
    if np.any(live):
        s, k, v, d = S[live], K[live], vol[live], disc[live]
        d1 = (np.log(s / (k * d)) + 0.5 * v * v) / v
        out[live] = s * ndtr(d1) - k * d * ndtr(d1 - v)
    out = np.where(K <= 0, S - K * disc, out).reshape(shape)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BsParams:
    spot: float = 1.0
    sigma: float = 0.2
    rate: float = 0.0

    def __post_init__(self) -> None:
        if not self.spot > 0:
            raise ValueError("spot must be positive")
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def jump_intensity(self) -> float:
        return 0.0

    def call(self, S, K, tau):
        return bs_call(S, K, self.sigma, self.rate, tau)


@dataclass(frozen=True)
class MjdParams:
    """Merton jump diffusion; log jump sizes are N(jump_mean, jump_vol^2)."""

    spot: float
    sigma: float
    rate: float
    jump_intensity: float
    jump_mean: float
    jump_vol: float

    def __post_init__(self) -> None:
        if not self.spot > 0:
            raise ValueError("spot must be positive")
        if self.sigma < 0 or self.jump_intensity < 0 or self.jump_vol < 0:
            raise ValueError("volatilities and intensity must be nonnegative")

    @property
    def kappa(self) -> float:
        """Mean relative jump size E[e^J] - 1."""
        return math.exp(self.jump_mean + 0.5 * self.jump_vol**2) - 1.0

    def call(self, S, K, tau):
        return merton_call(self, K, tau, S=S)


Model = BsParams | MjdParams


def _series_terms(lam_tau: float) -> int:
    """Poisson truncation level so the dropped tail is below 1e-12."""
    if lam_tau <= 0:
        return 1
    n = max(1, int(lam_tau + 10 * math.sqrt(lam_tau) + 10))
    while poisson.sf(n - 1, lam_tau) >= _SERIES_TAIL:
        n += 10
    return n


def merton_call(params: MjdParams, K, tau, S=None, n_terms: int | None = None):
    """Merton series: Poisson mixture of Black-Scholes prices.

    Each price term is bounded by the spot, so truncating where the Poisson
    tail drops below 1e-12 bounds the error by 1e-12 * S.
    """
    S = params.spot if S is None else S
    S, K, tau = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (S, K, tau)))
    if np.any(tau < 0):
        raise ValueError("negative time to maturity")
    lam, kap = params.jump_intensity, params.kappa
    if lam == 0.0:
        return bs_call(S, K, params.sigma, params.rate, tau)
    lam_p = lam * (1.0 + kap)
    tmax = float(np.max(tau)) if tau.size else 0.0
    N = n_terms or _series_terms(lam_p * tmax)
    out = np.zeros(np.broadcast(S, K, tau).shape)
    safe_tau = np.where(tau > 0, tau, 1.0)
    for n in range(N):
        weight = poisson.pmf(n, lam_p * tau)
        sig_n = np.sqrt(params.sigma**2 + n * params.jump_vol**2 / safe_tau)
        r_n = params.rate - lam * kap + n * math.log1p(kap) / safe_tau
        out = out + weight * bs_call(S, K, sig_n, r_n, np.where(tau > 0, tau, 0.0))
    out = np.where(tau > 0, out, np.maximum(S - K, 0.0))
    return out if out.ndim else float(out)


def model_call(model: Model, S, K, tau):
    return model.call(S, K, tau)


def quote_surface(model: Model, grid: Sequence[float], t1: float, T: float) -> QuoteSurface:
    """Model call prices on ``grid`` for both maturities (strike 0 carries the spot)."""
    k = np.asarray(grid, dtype=float)
    curves = []
    for mat in (t1, T):
        prices = np.asarray(model.call(model.spot, k, mat), dtype=float)
        prices[k == 0] = model.spot
        curves.append(QuoteCurve(mat, k, prices, model.spot))
    return QuoteSurface(*curves)


def _lognormal_cdf(k, spot, sigma, drift, tau):
    k = np.asarray(k, dtype=float)
    v = sigma * math.sqrt(tau)
    with np.errstate(divide="ignore"):
        z = (np.log(np.maximum(k, 1e-300) / spot) - drift * tau + 0.5 * v * v) / v
    return np.where(k > 0, ndtr(z), 0.0)


def true_marginal(model: Model, t: float) -> TrueMarginal:
    """Exact call function and CDF of S_t under the model (r = 0 pricing)."""
    if isinstance(model, MjdParams) and model.jump_intensity > 0:
        # the CDF is a plain Poisson mixture; the jump-compensated weights
        # lambda (1 + kappa) belong to the price series only
        lam_t = model.jump_intensity * t
        N = _series_terms(lam_t)
        w = poisson.pmf(np.arange(N), lam_t)

        def cdf(k):
            tot = 0.0
            for n in range(N):
                sig_n = math.sqrt(model.sigma**2 + n * model.jump_vol**2 / t)
                r_n = model.rate - model.jump_intensity * model.kappa + n * math.log1p(model.kappa) / t
                tot = tot + w[n] * _lognormal_cdf(k, model.spot, sig_n, r_n, t)
            return float(tot) if np.ndim(k) == 0 else tot
    else:

        def cdf(k):
            out = _lognormal_cdf(k, model.spot, model.sigma, model.rate, t)
            return float(out) if np.ndim(k) == 0 else out

    def call(k):
        return model.call(model.spot, k, t) * math.exp(model.rate * t)

    return TrueMarginal(call=call, cdf=cdf)


# bind the quote helper so callers can write model.quote_surface(grid, t1, T)
BsParams.quote_surface = quote_surface  # type: ignore[attr-defined]
MjdParams.quote_surface = quote_surface  # type: ignore[attr-defined]


# -- simulation ---------------------------------------------------------------


@dataclass(frozen=True)
class PathEnsemble:
    times: np.ndarray
    paths: np.ndarray  # shape (n_paths, n_times)
    seed: int

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    def at(self, t: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-12:
            raise KeyError(f"time {t!r} not on the ensemble grid")
        return self.paths[:, idx]


def time_grid(t_end: float, h: float) -> np.ndarray:
    steps = t_end / h
    n = int(round(steps))
    if abs(steps - n) > 1e-9 or n < 1:
        raise ValueError(f"step {h!r} does not divide horizon {t_end!r}")
    return np.linspace(0.0, t_end, n + 1)


def _simulate_block(model: Model, times: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    dt = np.diff(times)
    logs = np.zeros((n, times.size))
    logs[:, 0] = math.log(model.spot)
    lam = model.jump_intensity
    kap = model.kappa if lam > 0 else 0.0
    for i, h in enumerate(dt):
        z = rng.standard_normal(n)
        inc = (model.rate - lam * kap - 0.5 * model.sigma**2) * h + model.sigma * math.sqrt(h) * z
        if lam > 0:
            counts = rng.poisson(lam * h, n)
            inc = inc + counts * model.jump_mean + model.jump_vol * np.sqrt(counts) * rng.standard_normal(n)
        logs[:, i + 1] = logs[:, i] + inc
    return np.exp(logs)


def simulate_on(model: Model, times: Sequence[float], n_paths: int, seed: int) -> PathEnsemble:
    """Exact-in-distribution paths on an arbitrary increasing time grid.

    Paths are generated in blocks of 4096, each block drawing from its own
    substream spawned from ``seed``, so results do not depend on how blocks
    are scheduled.
    """
    times = np.asarray(times, dtype=float)
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must start at 0 and increase")
    n_blocks = -(-n_paths // _BLOCK)
    streams = np.random.SeedSequence(seed).spawn(n_blocks)
    blocks = []
    for b, ss in enumerate(streams):
        size = min(_BLOCK, n_paths - b * _BLOCK)
        blocks.append(_simulate_block(model, times, size, np.random.default_rng(ss)))
    return PathEnsemble(times, np.vstack(blocks), seed)


def simulate_paths(model: Model, t_end: float, h: float, n_paths: int, seed: int) -> PathEnsemble:
    return simulate_on(model, time_grid(t_end, h), n_paths, seed)


def write_paths_csv(ens: PathEnsemble) -> str:
    """Long format ``path,time,price``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "time", "price"])
    for p, row in enumerate(ens.paths):
        for t, v in zip(ens.times, row):
            w.writerow([p, repr(float(t)), repr(float(v))])
    return buf.getvalue()


@dataclass(frozen=True)
class McResult:
    price: float
    stderr: float


def mc_price(payoff: Payoff, model: Model, t1: float, T: float, n_paths: int, seed: int) -> McResult:
    """Discounted Monte-Carlo price of c(S_t1, S_T)."""
    if n_paths < 100:
        raise ValueError("need at least 100 paths")
    ens = simulate_on(model, [0.0, t1, T], n_paths, seed)
    vals = math.exp(-model.rate * T) * payoff(ens.paths[:, 1], ens.paths[:, 2])
    return McResult(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths)))


# -- valuation along paths ----------------------------------------------------


def conditional_value_t1(payoff: Payoff, model: Model, x, t1: float, T: float):
    """Time-t1 value of the target given S_t1 = x, in closed form."""
    x = np.asarray(x, dtype=float)
    tau = T - t1
    if payoff.name == "forward_start":
        return x * model.call(1.0, 1.0, tau)
    if payoff.name == "asian":
        K = payoff.strike
        k_eff = 2.0 * K - x
        disc = math.exp(-model.rate * tau)
        inside = 0.5 * model.call(x, np.maximum(k_eff, 1e-300), tau)
        deep = 0.5 * x + 0.5 * x * disc - K * disc
        return np.where(k_eff > 0, inside, deep)
    return _quadrature_t1(payoff, model, x, tau)


_QUAD_Z = np.linspace(-9.0, 9.0, 3601)
_QUAD_BLOCK = 1 << 22


def _quadrature_t1(payoff: Payoff, model: Model, x: np.ndarray, tau: float) -> np.ndarray:
    """E[c(x, S_T) | S_t1 = x] by a fine trapezoid rule over the normal shock.

    Kinked payoffs rule out Gauss-Hermite; the trapezoid error at a kink is
    O(dz^2).

    Jumps enter as a Poisson mixture of lognormals, truncated like the
    Merton series.
    """
    z = _QUAD_Z
    wz = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi) * (z[1] - z[0])
    wz[[0, -1]] *= 0.5
    lam = model.jump_intensity
    disc = math.exp(-model.rate * tau)
    if lam > 0:
        n = np.arange(_series_terms(lam * tau) + 1)
        pw = poisson.pmf(n, lam * tau)
        drift = (model.rate - lam * model.kappa - 0.5 * model.sigma**2) * tau + n * model.jump_mean
        vol = np.sqrt(model.sigma**2 * tau + n * model.jump_vol**2)
    else:
        pw = np.ones(1)
        drift = np.array([(model.rate - 0.5 * model.sigma**2) * tau])
        vol = np.array([model.sigma * math.sqrt(tau)])
    growth = np.exp(drift[:, None] + vol[:, None] * z[None, :]).ravel()
    weight = (pw[:, None] * wz[None, :]).ravel()
    flat = x.reshape(-1)
    out = np.empty(flat.size)
    # bound the (states x nodes) work array to a few million entries
    chunk = max(1, _QUAD_BLOCK // growth.size)
    for s in range(0, flat.size, chunk):
        xs = flat[s : s + chunk, None]
        out[s : s + chunk] = payoff(xs, xs * growth) @ weight
    return disc * out.reshape(x.shape)


def _inner_draws(model: Model, n_inner: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Antithetic standard normals plus jump draws shared by all outer states."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    half = max(1, n_inner // 2)
    z = rng.standard_normal(half)
    z = np.concatenate([z, -z])
    if model.jump_intensity > 0:
        # uniforms become Poisson counts once the horizon is known
        u = rng.random(z.size)
        return z, u, rng.standard_normal(z.size)
    return z, np.zeros(z.size), np.zeros(z.size)


def target_value_at(
    t: float,
    S_t,
    payoff: Payoff,
    model: Model,
    t1: float,
    T: float,
    inner_paths: int = 2000,
    seed: int = 0,
):
    """Model value at time ``t <= t1`` of the target, given S_t.

    Forward-start claims are valued in closed form by homogeneity.  Other
    payoffs use the closed-form value at t1 averaged over antithetic inner
    draws of S_t1 given S_t (the same draws for every outer state).
    """
    if t > t1 + 1e-12:
        raise ValueError("valuation time must not exceed t1")
    S_t = np.asarray(S_t, dtype=float)
    dt = t1 - t
    if payoff.name == "forward_start":
        return S_t * model.call(1.0, 1.0, T - t1)
    if dt <= 1e-12:
        return conditional_value_t1(payoff, model, S_t, t1, T)
    z, u, zj = _inner_draws(model, inner_paths, seed)
    lam = model.jump_intensity
    kap = model.kappa if lam > 0 else 0.0
    log_inc = (model.rate - lam * kap - 0.5 * model.sigma**2) * dt + model.sigma * math.sqrt(dt) * z
    if lam > 0:
        counts = poisson.ppf(u, lam * dt)
        log_inc = log_inc + counts * model.jump_mean + model.jump_vol * np.sqrt(counts) * zj
    growth = np.exp(log_inc)
    flat = S_t.reshape(-1)
    out = np.empty(flat.size)
    chunk = max(1, 200_000 // growth.size)
    for s in range(0, flat.size, chunk):
        x = flat[s : s + chunk, None] * growth[None, :]
        out[s : s + chunk] = conditional_value_t1(payoff, model, x, t1, T).mean(axis=1)
    out *= math.exp(-model.rate * dt)
    return out.reshape(S_t.shape) if S_t.ndim else float(out[0])


def hedge_value_at(t: float, S_t, weights: np.ndarray, instruments, model: Model, t1: float, T: float):
    """Model value at time ``t <= t1`` of the static hedge portfolio.

    Weight order follows ``instruments``: cash, stock (if held), the t1
    calls, then the T calls.  Cash pays its weight at t1.
    """
    if t > t1 + 1e-12:
        raise ValueError("valuation time must not exceed t1")
    S_t = np.asarray(S_t, dtype=float)
    w = np.asarray(weights, dtype=float)
    val = w[0] * math.exp(-model.rate * max(t1 - t, 0.0)) * np.ones_like(S_t)
    pos = 1
    if instruments.include_stock:
        val = val + w[pos] * S_t
        pos += 1
    tau1 = max(t1 - t, 0.0)
    for K in instruments.strikes:
        if w[pos] != 0.0:
            val = val + w[pos] * (np.maximum(S_t - K, 0.0) if tau1 == 0.0 else model.call(S_t, K, tau1))
        pos += 1
    for K in instruments.strikes_T:
        if w[pos] != 0.0:
            val = val + w[pos] * model.call(S_t, K, T - t)
        pos += 1
    return val
