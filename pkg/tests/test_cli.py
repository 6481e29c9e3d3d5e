from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np
import pytest

from robusthedge.cli import Context, run, sweep_rows
from robusthedge.config import ConfigError, derive_seed, from_mapping, load, parse_flat

SMALL = """
model.type = bs
model.sigma = 0.2
payoff.id = asian
grid = 0, 0.8, 0.9, 1.0, 1.1, 1.25, 1.5, 2.0
t1 = 0.5
T = 1.0
hedge.strikes = 0.9, 1.0, 1.1
hedge.restarts = 2
sim.paths = 200
sim.h = 0.25
sim.inner_paths = 200
sim.seed = 7
"""


def write_cfg(tmp_path: Path, text: str, name: str = "run.cfg") -> Path:
    p = tmp_path / name
    p.write_text(text + f"\noutput.dir = {tmp_path / 'out'}\n")
    return p


def rows(path: Path) -> list[list[str]]:
    return list(csv.reader(io.StringIO(path.read_text())))


def test_parse_flat_rules():
    raw = parse_flat("# comment\nt1 = 0.25  # trailing\nt1 = 0.5\n\nsim.seed=3\n")
    assert raw == {"t1": "0.5", "sim.seed": "3"}
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_flat("model.vol = 0.2")
    with pytest.raises(ConfigError):
        parse_flat("just words")


@pytest.mark.parametrize(
    "patch, message",
    [
        ({"t1": "1.5"}, "0 < t1 < T"),
        ({"payoff.id": "lookback"}, "payoff.id"),
        ({"model.type": "mjd"}, "jump_intensity"),
        ({"hedge.strikes": "2.5"}, "outside the grid"),
        ({"sim.paths": "10"}, "sim.paths"),
        ({"hedge.horizon": "T", "hedge.strikes_T": "1.0"}, "strikes_T"),
    ],
)
def test_config_validation(patch, message):
    raw = parse_flat(SMALL)
    raw.update(patch)
    with pytest.raises(ConfigError, match=message):
        from_mapping(raw)


def test_seed_is_required():
    raw = parse_flat(SMALL)
    del raw["sim.seed"]
    with pytest.raises(ConfigError, match="sim.seed"):
        from_mapping(raw)


def test_strike_spellings():
    raw = parse_flat(SMALL)
    for text, want in (("all", 7), ("none", 0), ("2", 2)):
        raw["hedge.strikes"] = text
        assert len(from_mapping(raw).strikes) == want


def test_digest_and_seeds():
    cfg = from_mapping(parse_flat(SMALL))
    assert cfg.digest() == from_mapping(parse_flat(SMALL)).digest()
    assert cfg.with_overrides(seed=8).digest() != cfg.digest()
    assert derive_seed(7, "paths") != derive_seed(7, "inner")
    assert derive_seed(7, "paths") == derive_seed(7, "paths")


def test_reversed_maturities_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL.replace("t1 = 0.5", "t1 = 1.0").replace("T = 1.0", "T = 0.5"))
    assert run(["pipeline", "--config", str(cfg)]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert run(["gen-quotes", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_gen_quotes_default_grid(tmp_path):
    cfg = write_cfg(tmp_path, SMALL.replace("grid = 0, 0.8, 0.9, 1.0, 1.1, 1.25, 1.5, 2.0\n", ""))
    assert run(["gen-quotes", "--config", str(cfg)]) == 0
    body = rows(tmp_path / "out" / "quotes.csv")
    assert body[0] == ["maturity", "strike", "price"]
    assert len(body) == 1 + 24
    assert all(float(r[2]) == 1.0 for r in body[1:] if float(r[1]) == 0.0)


def test_mjd_without_jumps_equals_bs(tmp_path):
    a = write_cfg(tmp_path, SMALL, "a.cfg")
    assert run(["gen-quotes", "--config", str(a), "--out", str(tmp_path / "bs")]) == 0
    mjd = SMALL.replace("model.type = bs", "model.type = mjd\nmodel.jump_intensity = 0")
    b = write_cfg(tmp_path, mjd, "b.cfg")
    assert run(["gen-quotes", "--config", str(b), "--out", str(tmp_path / "mjd")]) == 0
    assert (tmp_path / "bs" / "quotes.csv").read_bytes() == (tmp_path / "mjd" / "quotes.csv").read_bytes()


def test_arbitrage_in_quote_file_is_infeasible(tmp_path):
    quotes = tmp_path / "q.csv"
    quotes.write_text(
        "maturity,strike,price\n0.5,0,1.0\n0.5,1.0,0.12\n0.5,2.0,0.0\n1.0,0,1.0\n1.0,1.0,0.10\n1.0,2.0,0.0\n"
    )
    cfg = write_cfg(tmp_path, SMALL.replace("hedge.strikes = 0.9, 1.0, 1.1", "hedge.strikes = 1.0")
                    .replace("grid = 0, 0.8, 0.9, 1.0, 1.1, 1.25, 1.5, 2.0", "grid = 0, 1, 2")
                    + f"\nquotes.file = {quotes}\n")
    assert run(["marginals", "--config", str(cfg)]) == 4
    assert (tmp_path / "out" / "FAILED").exists()


def test_bounds_with_lp_dump(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert run(["bounds", "--config", str(cfg), "--dump-lp"]) == 0
    out = tmp_path / "out"
    stats = dict(rows(out / "bounds.csv")[1:])
    assert float(stats["lower"]) <= float(stats["upper"])
    assert (out / "lp_upper_bound.csv").read_text().startswith("# sense=max")
    assert not (out / "FAILED").exists()


def test_sweep_empty_counts(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert run(["sweep", "--config", str(cfg)]) == 0
    assert rows(tmp_path / "out" / "sweep.csv") == [
        ["count", "minmax", "mae", "mae_stderr", "peak_pfe_99", "peak_pfe_95", "peak_pfe_5", "peak_pfe_1"]
    ]


def test_sweep_nesting(tmp_path):
    ctx = Context(load(write_cfg(tmp_path, SMALL)), tmp_path / "out")
    by_count = {r[0]: r[1] for r in sweep_rows(ctx, [1, 7])}
    assert by_count[7] <= by_count[1] + 1e-6


def test_custom_table_payoff(tmp_path):
    x = y = np.array([0.0, 1.0, 3.0])
    table = tmp_path / "pay.csv"
    lines = ["x\\y," + ",".join(map(str, y))]
    lines += [f"{xi}," + ",".join(str(max(0.5 * (xi + yj) - 1.0, 0.0)) for yj in y) for xi in x]
    table.write_text("\n".join(lines) + "\n")
    cfg = write_cfg(tmp_path, SMALL.replace("payoff.id = asian", f"payoff.id = custom\npayoff.table = {table}"))
    assert run(["hedge", "--config", str(cfg)]) == 0
    stats = dict(rows(tmp_path / "out" / "hedge.csv")[1:])
    assert float(stats["maxmin_value"]) <= float(stats["minmax_value"]) + 1e-6


def test_pipeline_small_is_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    assert run(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert run(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    for want in ("summary.csv", "weights.csv", "report.csv", "conditional_curve.csv", "worst_coupling.csv"):
        assert want in names
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
