"""Hedging-error statistics over simulated path ensembles."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .models import Model, PathEnsemble, hedge_value_at, target_value_at
from .payoffs import Payoff

PFE_LEVELS = (99, 95, 5, 1)


def weights_hash(weights: Sequence[float]) -> str:
    """Short digest of a weight vector, stable across platforms."""
    arr = np.ascontiguousarray(np.asarray(weights, dtype="<f8"))
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class ErrorPanel:
    """Errors e[path, time] = target value minus hedge value."""

    times: np.ndarray
    errors: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.errors.shape[0]

    def column(self, t: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-12:
            raise KeyError(f"time {t!r} not on the panel grid")
        return self.errors[:, idx]


def target_panel(
    payoff: Payoff,
    ensemble: PathEnsemble,
    model: Model,
    t1: float,
    T: float,
    inner_paths: int = 2000,
    seed: int = 0,
) -> np.ndarray:
    """Target values along every path; independent of the hedge, so worth caching."""
    if ensemble.times[-1] > t1 + 1e-12:
        raise ValueError("ensemble grid must lie inside [0, t1]")
    out = np.empty_like(ensemble.paths)
    for k, t in enumerate(ensemble.times):
        out[:, k] = target_value_at(float(t), ensemble.paths[:, k], payoff, model, t1, T, inner_paths, seed)
    return out


def hedging_error_panel(
    weights: Sequence[float],
    instruments,
    payoff: Payoff,
    ensemble: PathEnsemble,
    model: Model,
    t1: float,
    T: float,
    targets: np.ndarray | None = None,
) -> ErrorPanel:
    """Panel of hedging errors; pass ``targets`` from :func:`target_panel` to reuse them."""
    if targets is None:
        targets = target_panel(payoff, ensemble, model, t1, T)
    if targets.shape != ensemble.paths.shape:
        raise ValueError("target panel does not match the ensemble")
    w = np.asarray(weights, dtype=float)
    hedge = np.empty_like(ensemble.paths)
    for k, t in enumerate(ensemble.times):
        hedge[:, k] = hedge_value_at(float(t), ensemble.paths[:, k], w, instruments, model, t1, T)
    meta = {
        "model": type(model).__name__,
        "payoff": payoff.name,
        "weights_hash": weights_hash(w),
        "seed": ensemble.seed,
    }
    return ErrorPanel(ensemble.times.copy(), targets - hedge, meta)


def nearest_rank(values: np.ndarray, level: float, axis: int = 0) -> np.ndarray:
    """The ceil(q n)-th order statistic along ``axis``, q = level / 100."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    rank = min(n, max(1, math.ceil(level / 100.0 * n - 1e-9)))
    return np.sort(values, axis=axis).take(rank - 1, axis=axis)


def peak_pfe(panel: ErrorPanel, levels: Sequence[float] = PFE_LEVELS) -> dict[float, float]:
    """Extreme percentile of the error over the time grid.

    Upper levels (>= 50) take the maximum over times, lower levels the minimum.
    """
    if panel.n_paths < 100:
        raise ValueError("peak PFE needs at least 100 paths")
    out = {}
    for q in levels:
        per_time = nearest_rank(panel.errors, q, axis=0)
        out[q] = float(per_time.max() if q >= 50 else per_time.min())
    return out


@dataclass(frozen=True)
class MaeResult:
    mae: float
    stderr: float


def mae_at_t1(panel: ErrorPanel, t1: float | None = None) -> MaeResult:
    """Mean absolute error at t1 (the last grid time unless given)."""
    col = panel.errors[:, -1] if t1 is None else panel.column(t1)
    a = np.abs(col)
    se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return MaeResult(float(a.mean()), se)


def write_report_csv(panel: ErrorPanel, t1: float | None = None, levels: Sequence[float] = PFE_LEVELS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["statistic", "value"])
    mae = mae_at_t1(panel, t1)
    w.writerow(["mae", repr(mae.mae)])
    w.writerow(["mae_stderr", repr(mae.stderr)])
    for q, v in peak_pfe(panel, levels).items():
        w.writerow([f"peak_pfe_{q:g}", repr(v)])
    return buf.getvalue()


def report_sidecar(panel: ErrorPanel, config_hash: str) -> str:
    """One JSON line of run metadata to sit next to the report CSV."""
    record = dict(panel.metadata)
    record["config_hash"] = config_hash
    record["n_paths"] = panel.n_paths
    record["times"] = [float(t) for t in panel.times]
    return json.dumps(record, sort_keys=True) + "\n"
