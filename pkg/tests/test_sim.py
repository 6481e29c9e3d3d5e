from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import BS, T1, T
from robusthedge import payoffs
from robusthedge.hedge import InstrumentSet
from robusthedge.models import mc_price, simulate_paths
from robusthedge.sim import (
    ErrorPanel,
    hedging_error_panel,
    mae_at_t1,
    nearest_rank,
    peak_pfe,
    report_sidecar,
    target_panel,
    weights_hash,
    write_report_csv,
)

TIMES = np.array([0.0, 0.25, 0.5])


def panel(errors) -> ErrorPanel:
    e = np.asarray(errors, dtype=float)
    return ErrorPanel(np.linspace(0.0, 0.5, e.shape[1]), e)


def test_constant_panel():
    out = peak_pfe(panel(np.full((200, 3), 0.3)))
    assert out == {99: 0.3, 95: 0.3, 5: 0.3, 1: 0.3}


def test_nearest_rank_example():
    col = (np.arange(1, 101) / 100.0)[::-1, None]
    assert peak_pfe(panel(col))[99] == pytest.approx(0.99)
    assert nearest_rank(np.arange(1, 101), 5) == 5


def test_single_column_is_its_percentile():
    vals = np.random.default_rng(0).normal(size=(500, 1))
    out = peak_pfe(panel(vals))
    for q in (99, 95, 5, 1):
        assert out[q] == nearest_rank(vals[:, 0], q)


def test_too_few_paths():
    with pytest.raises(ValueError):
        peak_pfe(panel(np.zeros((50, 3))))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(100, 400), st.integers(1, 5))
def test_peak_pfe_envelope(seed, n, m):
    e = np.random.default_rng(seed).normal(size=(n, m))
    out = peak_pfe(panel(e))
    assert out[99] >= out[95] >= out[5] >= out[1]
    # an upper level is a max over times, so it dominates every single column
    for k in range(m):
        assert out[99] >= nearest_rank(e[:, k], 99)
        assert out[1] <= nearest_rank(e[:, k], 1)


def test_mae_zero_and_stderr():
    assert mae_at_t1(panel(np.zeros((10, 3)))).mae == 0.0
    e = np.tile([[1.0], [-1.0]], (50, 3))
    res = mae_at_t1(panel(e))
    assert res.mae == 1.0 and res.stderr == 0.0
    with pytest.raises(KeyError):
        mae_at_t1(panel(e), t1=0.4)


@pytest.fixture(scope="module")
def ensemble():
    return simulate_paths(BS, T1, 0.25, 400, seed=11)


def test_perfect_replication_has_zero_t1_error():
    # a generic payoff is valued by quadrature inside a nested average, so keep it small
    ens = simulate_paths(BS, T1, 0.25, 20, seed=11)
    inst = InstrumentSet(strikes=(1.0,))
    pay = payoffs.call_on_first(1.0)
    targets = target_panel(pay, ens, BS, T1, T, inner_paths=4000, seed=2)
    p = hedging_error_panel(np.array([0.0, 0.0, 1.0]), inst, pay, ens, BS, T1, T, targets=targets)
    np.testing.assert_allclose(p.column(T1), 0.0, atol=1e-12)
    # earlier targets match the call value up to inner sampling noise
    np.testing.assert_allclose(p.errors, 0.0, atol=2e-3)


def test_zero_weights_give_targets(ensemble):
    inst = InstrumentSet()
    pay = payoffs.forward_start()
    targets = target_panel(pay, ensemble, BS, T1, T)
    p = hedging_error_panel(np.zeros(2), inst, pay, ensemble, BS, T1, T, targets=targets)
    np.testing.assert_array_equal(p.errors, targets)
    assert p.metadata["weights_hash"] == weights_hash(np.zeros(2))


def test_cash_at_price_has_small_time_zero_error(ensemble):
    pay = payoffs.asian()
    price = mc_price(pay, BS, T1, T, 100_000, seed=3)
    inst = InstrumentSet(include_stock=False)
    p = hedging_error_panel(np.array([price.price]), inst, pay, ensemble, BS, T1, T)
    assert abs(p.column(0.0).mean()) <= 3 * price.stderr + 2e-3


def test_report_outputs():
    p = ErrorPanel(TIMES, np.random.default_rng(1).normal(size=(150, 3)), {"seed": 1})
    lines = write_report_csv(p).splitlines()
    assert lines[0] == "statistic,value"
    assert [l.split(",")[0] for l in lines[1:]] == [
        "mae", "mae_stderr", "peak_pfe_99", "peak_pfe_95", "peak_pfe_5", "peak_pfe_1",
    ]
    record = json.loads(report_sidecar(p, "abc"))
    assert record["config_hash"] == "abc" and record["n_paths"] == 150


def test_weights_hash_stable():
    assert weights_hash([1.0, 2.0]) == weights_hash(np.array([1.0, 2.0]))
    assert weights_hash([1.0, 2.0]) != weights_hash([2.0, 1.0])
