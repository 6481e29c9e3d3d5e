"""Flat ``section.key = value`` run configuration."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .hedge import DEFAULT_BOX, InstrumentSet
from .models import BsParams, MjdParams, Model
from .payoffs import Payoff, by_name, from_table

DEFAULT_GRID = (
    0.0,
    0.65985287,
    0.69305573,
    0.83860362,
    0.86371482,
    0.97595447,
    1.00102542,
    1.0484879,
    1.09459717,
    1.15062857,
    1.57436388,
    2.0,
)


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (exit code 2)."""


KNOWN_KEYS = {
    "model.type",
    "model.spot",
    "model.sigma",
    "model.rate",
    "model.jump_intensity",
    "model.jump_mean",
    "model.jump_vol",
    "payoff.id",
    "payoff.strike",
    "payoff.table",
    "quotes.file",
    "grid",
    "t1",
    "T",
    "hedge.strikes",
    "hedge.strikes_T",
    "hedge.include_stock",
    "hedge.horizon",
    "hedge.box",
    "hedge.tol",
    "hedge.max_cuts",
    "hedge.restarts",
    "sim.paths",
    "sim.h",
    "sim.seed",
    "sim.inner_paths",
    "sweep.counts",
    "output.dir",
}


def parse_flat(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; later keys win."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {n}: unknown config key {key!r}")
        out[key] = val
    return out


def _float(raw: dict[str, str], key: str, default: float | None = None) -> float:
    if key not in raw:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        val = float(raw[key])
    except ValueError:
        raise ConfigError(f"{key}: not a number: {raw[key]!r}") from None
    if not np.isfinite(val):
        raise ConfigError(f"{key}: must be finite")
    return val


def _int(raw: dict[str, str], key: str, default: int) -> int:
    if key not in raw:
        return default
    try:
        return int(raw[key])
    except ValueError:
        raise ConfigError(f"{key}: not an integer: {raw[key]!r}") from None


def _floats(text: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers") from None


def _bool(raw: dict[str, str], key: str, default: bool) -> bool:
    if key not in raw:
        return default
    v = raw[key].lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {raw[key]!r}")


@dataclass(frozen=True)
class RunConfig:
    model: Model
    payoff_id: str
    strike: float
    grid: tuple[float, ...]
    t1: float
    T: float
    strikes: tuple[float, ...]
    strikes_T: tuple[float, ...]
    include_stock: bool = True
    horizon: str = "t1"
    box: float = DEFAULT_BOX
    tol: float = 1e-6
    max_cuts: int = 500
    restarts: int = 20
    paths: int = 10_000
    h: float = 0.1
    seed: int = 0
    inner_paths: int = 2000
    sweep_counts: tuple[int, ...] = ()
    out_dir: str = "out"
    payoff_table: str | None = None
    quotes_file: str | None = None
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def instruments(self) -> InstrumentSet:
        return InstrumentSet(self.strikes, self.strikes_T, self.include_stock)

    def payoff(self) -> Payoff:
        if self.payoff_id == "custom":
            return _table_payoff(self.payoff_table)
        return by_name(self.payoff_id, self.strike)

    def with_overrides(self, seed: int | None = None, tol: float | None = None, out_dir: str | None = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if tol is not None:
            if not tol > 0:
                raise ConfigError("--tol must be positive")
            cfg = replace(cfg, tol=float(tol))
        if out_dir is not None:
            cfg = replace(cfg, out_dir=out_dir)
        return cfg

    def canonical(self) -> str:
        """Sorted ``key=value`` text of every effective setting."""
        m = self.model
        items = {
            "model.type": "mjd" if isinstance(m, MjdParams) else "bs",
            "model.spot": repr(m.spot),
            "model.sigma": repr(m.sigma),
            "model.rate": repr(m.rate),
            "payoff.id": self.payoff_id,
            "payoff.strike": repr(self.strike),
            "grid": ",".join(map(repr, self.grid)),
            "t1": repr(self.t1),
            "T": repr(self.T),
            "hedge.strikes": ",".join(map(repr, self.strikes)),
            "hedge.strikes_T": ",".join(map(repr, self.strikes_T)),
            "hedge.include_stock": str(self.include_stock).lower(),
            "hedge.horizon": self.horizon,
            "hedge.box": repr(self.box),
            "hedge.tol": repr(self.tol),
            "hedge.max_cuts": str(self.max_cuts),
            "hedge.restarts": str(self.restarts),
            "sim.paths": str(self.paths),
            "sim.h": repr(self.h),
            "sim.seed": str(self.seed),
            "sim.inner_paths": str(self.inner_paths),
            "sweep.counts": ",".join(map(str, self.sweep_counts)),
        }
        if isinstance(m, MjdParams):
            items.update(
                {
                    "model.jump_intensity": repr(m.jump_intensity),
                    "model.jump_mean": repr(m.jump_mean),
                    "model.jump_vol": repr(m.jump_vol),
                }
            )
        if self.payoff_table:
            items["payoff.table"] = self.payoff_table
        if self.quotes_file:
            items["quotes.file"] = self.quotes_file
        return "".join(f"{k}={items[k]}\n" for k in sorted(items))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def derive_seed(seed: int, label: str) -> int:
    """Independent 63-bit seed for one named stage, from the run seed."""
    h = hashlib.sha256(f"{int(seed)}:{label}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def _strike_list(text: str | None, grid: tuple[float, ...], key: str) -> tuple[float, ...]:
    """``all`` (every positive grid strike), ``none``, a count, or explicit strikes."""
    positive = tuple(k for k in grid if k > 0)
    if text is None or text.lower() == "none" or text == "":
        return ()
    if text.lower() == "all":
        return positive
    if text.isdigit():
        n = int(text)
        if n > len(positive):
            raise ConfigError(f"{key}: {n} strikes requested, grid has {len(positive)}")
        return positive[:n]
    return _floats(text, key)


def _model(raw: dict[str, str]) -> Model:
    kind = raw.get("model.type", "bs").lower()
    spot = _float(raw, "model.spot", 1.0)
    sigma = _float(raw, "model.sigma", 0.2)
    rate = _float(raw, "model.rate", 0.0)
    try:
        if kind == "bs":
            extra = {"model.jump_intensity", "model.jump_mean", "model.jump_vol"} & raw.keys()
            if extra:
                raise ConfigError(f"jump keys {sorted(extra)} given for a bs model")
            return BsParams(spot, sigma, rate)
        if kind == "mjd":
            if "model.jump_intensity" not in raw:
                raise ConfigError("mjd model requires an explicit model.jump_intensity")
            return MjdParams(
                spot,
                sigma,
                rate,
                _float(raw, "model.jump_intensity"),
                _float(raw, "model.jump_mean", -0.1),
                _float(raw, "model.jump_vol", 0.13),
            )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"model: {exc}") from None
    raise ConfigError(f"model.type must be bs or mjd, got {kind!r}")


def _table_payoff(path: str | None) -> Payoff:
    """Payoff tabulated in a CSV: header ``x\\y,y_1,...``, then ``x_i,c_i1,...``."""
    if not path:
        raise ConfigError("payoff.id = custom needs payoff.table")
    try:
        rows = [line.split(",") for line in Path(path).read_text().splitlines() if line.strip()]
        y = np.array([float(v) for v in rows[0][1:]])
        x = np.array([float(r[0]) for r in rows[1:]])
        vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"payoff.table: cannot read {path!r}: {exc}") from None
    return from_table(x, y, vals, name="custom")


def from_mapping(raw: dict[str, str]) -> RunConfig:
    for key in raw:
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    model = _model(raw)
    grid = _floats(raw["grid"], "grid") if "grid" in raw else DEFAULT_GRID
    if len(grid) < 2 or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 0:
        raise ConfigError("grid must be increasing, nonnegative, with at least two points")
    t1, T = _float(raw, "t1", 0.5), _float(raw, "T", 1.0)
    if not 0 < t1 < T:
        raise ConfigError(f"need 0 < t1 < T, got t1={t1!r}, T={T!r}")
    payoff_id = raw.get("payoff.id", "forward_start")
    if payoff_id not in ("asian", "forward_start", "custom"):
        raise ConfigError(f"payoff.id must be asian, forward_start or custom, got {payoff_id!r}")
    strikes = _strike_list(raw.get("hedge.strikes", "all"), grid, "hedge.strikes")
    strikes_T = _strike_list(raw.get("hedge.strikes_T"), grid, "hedge.strikes_T")
    for k in strikes + strikes_T:
        if not grid[0] < k <= grid[-1]:
            raise ConfigError(f"instrument strike {k!r} outside the grid hull")
    horizon = raw.get("hedge.horizon", "t1")
    if horizon not in ("t1", "T"):
        raise ConfigError(f"hedge.horizon must be t1 or T, got {horizon!r}")
    if horizon == "T" and strikes_T:
        raise ConfigError("hedge.strikes_T requires hedge.horizon = t1")
    if "sim.seed" not in raw:
        raise ConfigError("sim.seed is required")
    counts = tuple(int(v) for v in raw.get("sweep.counts", "").split(",") if v.strip())
    cfg = RunConfig(
        model=model,
        payoff_id=payoff_id,
        strike=_float(raw, "payoff.strike", 1.0),
        grid=grid,
        t1=t1,
        T=T,
        strikes=strikes,
        strikes_T=strikes_T,
        include_stock=_bool(raw, "hedge.include_stock", True),
        horizon=horizon,
        box=_float(raw, "hedge.box", DEFAULT_BOX),
        tol=_float(raw, "hedge.tol", 1e-6),
        max_cuts=_int(raw, "hedge.max_cuts", 500),
        restarts=_int(raw, "hedge.restarts", 20),
        paths=_int(raw, "sim.paths", 10_000),
        h=_float(raw, "sim.h", 0.1),
        seed=_int(raw, "sim.seed", 0),
        inner_paths=_int(raw, "sim.inner_paths", 2000),
        sweep_counts=counts,
        out_dir=raw.get("output.dir", "out"),
        payoff_table=raw.get("payoff.table"),
        quotes_file=raw.get("quotes.file"),
        raw=dict(raw),
    )
    if cfg.box <= 0 or cfg.tol <= 0 or cfg.h <= 0 or cfg.paths < 100 or cfg.max_cuts < 1:
        raise ConfigError("hedge.box, hedge.tol, sim.h must be positive; sim.paths >= 100; hedge.max_cuts >= 1")
    if any(c < 0 or c > len([k for k in grid if k > 0]) for c in counts):
        raise ConfigError("sweep.counts out of range for the grid")
    if cfg.payoff_id == "custom":
        cfg.payoff()  # fail early on an unreadable table
    return cfg


def load(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc}") from None
    return from_mapping(parse_flat(text))
