"""Command-line runner: quotes -> marginals -> bounds -> hedges -> simulation."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import sim
from .config import ConfigError, RunConfig, derive_seed, load
from .hedge import (
    HedgeProblem,
    InstrumentSet,
    MaxMinResult,
    MinMaxResult,
    SignCapExceeded,
    conditional_curve,
    maxmin_hedge,
    minmax_hedge,
    super_hedge_weights,
    write_curve_csv,
    write_weights_csv,
)
from .lp import LpProblem, LpSolverError, dump_problem_csv
from .marginals import DiscreteMeasure, MarginalError, build_unbounded_pair, check_convex_order, write_measure_csv
from .models import conditional_value_t1, hedge_value_at, quote_surface, simulate_paths
from .mot import (
    DualCheckError,
    MotInfeasible,
    PriceBounds,
    SuperHedge,
    coupling_constraints,
    price_bounds,
    super_hedge,
    write_coupling_csv,
    write_portfolio_csv,
)
from .quotes import QuoteError, QuoteSurface, read_quotes_csv, validate_quotes, write_quotes_csv

log = logging.getLogger("robusthedge")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INFEASIBLE = 0, 2, 3, 4


class RunFailure(RuntimeError):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _stat_csv(rows: Sequence[tuple[str, object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["statistic", "value"])
    for k, v in rows:
        w.writerow([k, repr(float(v)) if isinstance(v, (float, np.floating)) else v])
    return buf.getvalue()


@dataclass
class Context:
    """Stage outputs, computed lazily and shared between commands."""

    cfg: RunConfig
    out: Path
    dump_lp: bool = False
    _surface: QuoteSurface | None = None
    _marginals: tuple[DiscreteMeasure, DiscreteMeasure] | None = None

    def write(self, name: str, text: str) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text)

    # -- stages -----------------------------------------------------------

    def surface(self) -> QuoteSurface:
        if self._surface is None:
            cfg = self.cfg
            if cfg.quotes_file:
                try:
                    self._surface = read_quotes_csv(Path(cfg.quotes_file).read_text())
                except OSError as exc:
                    raise ConfigError(f"quotes.file: {exc}") from None
            else:
                self._surface = quote_surface(cfg.model, cfg.grid, cfg.t1, cfg.T)
            bad = validate_quotes(self._surface)
            if bad:
                raise RunFailure(EXIT_INFEASIBLE, "quotes admit arbitrage: " + "; ".join(map(str, bad[:5])))
        return self._surface

    def marginals(self) -> tuple[DiscreteMeasure, DiscreteMeasure]:
        if self._marginals is None:
            mu, nu = build_unbounded_pair(self.surface())
            if not check_convex_order(mu, nu):
                raise MotInfeasible("no martingale coupling: marginals not in convex order")
            self._marginals = (mu, nu)
        return self._marginals

    def instruments(self, count: int | None = None) -> InstrumentSet:
        inst = self.cfg.instruments
        if count is not None:
            positive = tuple(k for k in self.cfg.grid if k > 0)
            inst = InstrumentSet(positive[:count], (), inst.include_stock)
        return inst

    def minmax(self, inst: InstrumentSet, problem: HedgeProblem | None = None) -> MinMaxResult:
        mu, nu = self.marginals()
        horizon = "T" if self.cfg.horizon == "T" else "t1"
        return minmax_hedge(
            inst,
            mu,
            nu,
            self.cfg.payoff(),
            horizon=horizon,
            w_box=self.cfg.box,
            tol=self.cfg.tol,
            max_cuts=self.cfg.max_cuts,
            problem=problem,
        )

    def maxmin(self, inst: InstrumentSet, problem: HedgeProblem, start=None) -> MaxMinResult:
        mu, nu = self.marginals()
        return maxmin_hedge(
            inst,
            mu,
            nu,
            self.cfg.payoff(),
            restarts=self.cfg.restarts,
            seed=derive_seed(self.cfg.seed, "maxmin"),
            w_box=self.cfg.box,
            start=start,
            problem=problem,
        )

    def ensemble(self):
        cfg = self.cfg
        return simulate_paths(cfg.model, cfg.t1, cfg.h, cfg.paths, derive_seed(cfg.seed, "paths"))

    def targets(self, ens) -> np.ndarray:
        cfg = self.cfg
        return sim.target_panel(cfg.payoff(), ens, cfg.model, cfg.t1, cfg.T, cfg.inner_paths, derive_seed(cfg.seed, "inner"))


# -- commands -------------------------------------------------------------


def cmd_gen_quotes(ctx: Context) -> None:
    ctx.write("quotes.csv", write_quotes_csv(ctx.surface()))


def cmd_marginals(ctx: Context) -> None:
    mu, nu = ctx.marginals()
    ctx.write("mu.csv", write_measure_csv(mu))
    ctx.write("nu.csv", write_measure_csv(nu))


def _bounds(ctx: Context) -> tuple[PriceBounds, SuperHedge]:
    mu, nu = ctx.marginals()
    payoff = ctx.cfg.payoff()
    if ctx.dump_lp:
        A, b = coupling_constraints(mu, nu)
        prob = LpProblem(payoff.grid(mu.atoms, nu.atoms).ravel(), A, b, ["="] * A.shape[0], sense="max")
        ctx.write("lp_upper_bound.csv", dump_problem_csv(prob))
    bounds = price_bounds(mu, nu, payoff)
    sh = super_hedge(mu, nu, payoff, ctx.cfg.t1, ctx.cfg.T)
    return bounds, sh


def cmd_bounds(ctx: Context) -> tuple[PriceBounds, SuperHedge]:
    bounds, sh = _bounds(ctx)
    ctx.write("bounds.csv", _stat_csv([("lower", bounds.lower), ("upper", bounds.upper), ("super_hedge_price", sh.price)]))
    ctx.write("coupling_upper.csv", write_coupling_csv(bounds.argmax))
    ctx.write("coupling_lower.csv", write_coupling_csv(bounds.argmin))
    ctx.write("super_hedge.csv", write_portfolio_csv(sh))
    return bounds, sh


def cmd_hedge(ctx: Context) -> tuple[MinMaxResult, MaxMinResult]:
    cfg = ctx.cfg
    mu, nu = ctx.marginals()
    inst = ctx.instruments()
    payoff = cfg.payoff()
    problem = HedgeProblem(inst, mu, nu, payoff)
    mm = ctx.minmax(inst, problem)
    mx = ctx.maxmin(inst, problem, start=mm.worst_coupling)
    ctx.write("weights.csv", write_weights_csv(mm.weights))
    ctx.write("worst_coupling.csv", write_coupling_csv(mm.worst_coupling))
    rows = []
    for x, cond in conditional_curve(mm.worst_coupling, payoff):
        true_val = float(conditional_value_t1(payoff, cfg.model, np.array([x]), cfg.t1, cfg.T)[0])
        port = float(hedge_value_at(cfg.t1, np.array([x]), mm.weights.values, inst, cfg.model, cfg.t1, cfg.T)[0])
        rows.append((x, cond, true_val, port))
    ctx.write("conditional_curve.csv", write_curve_csv(rows))
    ctx.write(
        "hedge.csv",
        _stat_csv(
            [
                ("horizon", cfg.horizon),
                ("minmax_value", mm.value),
                ("minmax_lower_bound", mm.lower_bound),
                ("gap", mm.gap),
                ("iterations", mm.iterations),
                ("converged", str(mm.converged).lower()),
                ("maxmin_value", mx.value),
            ]
        ),
    )
    if not mm.converged:
        log.warning("min-max stopped at the iteration cap; reported weights are the best iterate")
    return mm, mx


def _panel_stats(ctx: Context, weights: np.ndarray, inst: InstrumentSet, ens, targets) -> sim.ErrorPanel:
    cfg = ctx.cfg
    return sim.hedging_error_panel(weights, inst, cfg.payoff(), ens, cfg.model, cfg.t1, cfg.T, targets)


def cmd_simulate(ctx: Context, mm: MinMaxResult | None = None):
    if mm is None:
        mm, _ = cmd_hedge(ctx)
    ens = ctx.ensemble()
    targets = ctx.targets(ens)
    panel = _panel_stats(ctx, mm.weights.values, mm.weights.instruments, ens, targets)
    ctx.write("report.csv", sim.write_report_csv(panel))
    ctx.write("report.jsonl", sim.report_sidecar(panel, ctx.cfg.digest()))
    return panel, ens, targets


def cmd_pipeline(ctx: Context) -> None:
    cmd_gen_quotes(ctx)
    cmd_marginals(ctx)
    bounds, sh = cmd_bounds(ctx)
    mm, mx = cmd_hedge(ctx)
    panel, ens, targets = cmd_simulate(ctx, mm)
    dual_w = super_hedge_weights(sh)
    dual_panel = _panel_stats(ctx, dual_w.values, dual_w.instruments, ens, targets)
    mae, dual_mae = sim.mae_at_t1(panel), sim.mae_at_t1(dual_panel)
    rows: list[tuple[str, object]] = [
        ("minmax_value", mm.value),
        ("minmax_gap", mm.gap),
        ("maxmin_value", mx.value),
        ("lower_bound", bounds.lower),
        ("upper_bound", bounds.upper),
        ("mae", mae.mae),
        ("mae_stderr", mae.stderr),
    ]
    rows += [(f"peak_pfe_{q:g}", v) for q, v in sim.peak_pfe(panel).items()]
    # The super-hedge dominates the payoff cell by cell, so its t1 errors
    # share one sign and their worst-case sum is the width of the bounds.
    rows += [
        ("dual_max_error", bounds.upper - bounds.lower),
        ("dual_mae", dual_mae.mae),
        ("dual_mae_stderr", dual_mae.stderr),
    ]
    rows += [(f"dual_peak_pfe_{q:g}", v) for q, v in sim.peak_pfe(dual_panel).items()]
    ctx.write("dual_weights.csv", write_weights_csv(dual_w))
    ctx.write("summary.csv", _stat_csv(rows))


SWEEP_HEADER = ["count", "minmax", "mae", "mae_stderr", "peak_pfe_99", "peak_pfe_95", "peak_pfe_5", "peak_pfe_1"]


def sweep_rows(ctx: Context, counts: Sequence[int]) -> list[list[float]]:
    """Nested t1-call subsets in ascending strike order, one row per count."""
    if not counts:
        return []
    cfg = ctx.cfg
    mu, nu = ctx.marginals()
    ens = ctx.ensemble()
    targets = ctx.targets(ens)
    rows = []
    for n in counts:
        inst = ctx.instruments(n)
        mm = ctx.minmax(inst, HedgeProblem(inst, mu, nu, cfg.payoff()))
        panel = _panel_stats(ctx, mm.weights.values, inst, ens, targets)
        mae = sim.mae_at_t1(panel)
        pfe = sim.peak_pfe(panel)
        rows.append([n, mm.value, mae.mae, mae.stderr, pfe[99], pfe[95], pfe[5], pfe[1]])
    return rows


def cmd_sweep(ctx: Context) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for row in sweep_rows(ctx, ctx.cfg.sweep_counts):
        w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    ctx.write("sweep.csv", buf.getvalue())


COMMANDS: dict[str, Callable[[Context], object]] = {
    "gen-quotes": cmd_gen_quotes,
    "marginals": cmd_marginals,
    "bounds": cmd_bounds,
    "hedge": cmd_hedge,
    "simulate": cmd_simulate,
    "pipeline": cmd_pipeline,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robusthedge", description="Model-free robust hedging experiments.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="flat key = value config file")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--seed", type=int, help="run seed (overrides sim.seed)")
    ap.add_argument("--tol", type=float, help="min-max gap tolerance (overrides hedge.tol)")
    ap.add_argument("--dump-lp", action="store_true", help="also write the upper-bound LP as CSV blocks")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg = load(args.config).with_overrides(args.seed, args.tol, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ctx = Context(cfg, Path(cfg.out_dir), args.dump_lp)
    marker = ctx.out / "FAILED"
    if marker.exists():
        marker.unlink()
    code, message = EXIT_OK, ""
    try:
        COMMANDS[args.command](ctx)
    except ConfigError as exc:
        code, message = EXIT_CONFIG, f"config error: {exc}"
    except RunFailure as exc:
        code, message = exc.code, str(exc)
    except (MotInfeasible, MarginalError, QuoteError) as exc:
        code, message = EXIT_INFEASIBLE, f"infeasible marginals: {exc}"
    except (LpSolverError, SignCapExceeded, DualCheckError) as exc:
        code, message = EXIT_SOLVER, f"solver failure: {exc}"
    except Exception as exc:  # keep partial artifacts and leave the marker
        log.exception("unexpected failure")
        code, message = 1, f"unexpected failure: {exc!r}"
    if code != EXIT_OK:
        print(message, file=sys.stderr)
        ctx.write("FAILED", f"{args.command}: {message}\n")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
