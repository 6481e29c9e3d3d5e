from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robusthedge.models import BsParams, quote_surface
from robusthedge.quotes import (
    QuoteCurve,
    QuoteError,
    QuoteSurface,
    extrapolation_zero,
    interpolate_call,
    read_quotes_csv,
    validate_quotes,
    write_quotes_csv,
)


def curve(strikes, prices, maturity=0.5, spot=1.0):
    return QuoteCurve(maturity, np.array(strikes, float), np.array(prices, float), spot)


def surface(p1, p2, strikes=(0, 1, 2)):
    return QuoteSurface(curve(strikes, p1, 0.5), curve(strikes, p2, 1.0))


def test_valid_surface_has_empty_report():
    assert validate_quotes(surface([1, 0.1, 0], [1, 0.1, 0])) == []


def test_monotonicity_violation_reports_index():
    report = validate_quotes(surface([1, 0.2, 0.5], [1, 0.2, 0.5]))
    mono = [v for v in report if v.rule == "t1.monotonicity"]
    assert [v.index for v in mono] == [2]


def test_calendar_violation():
    report = validate_quotes(surface([1, 0.12, 0], [1, 0.10, 0]))
    assert any(v.rule == "calendar" and v.index == 1 for v in report)


def test_reversed_maturities_flagged():
    s = QuoteSurface(curve([0, 1], [1, 0.1], 1.0), curve([0, 1], [1, 0.1], 0.5))
    assert any(v.rule == "maturity_order" for v in validate_quotes(s))


@pytest.mark.parametrize(
    "strikes, prices",
    [([0, 1], [1.0]), ([0], [1.0]), ([0, 2, 1], [1, 0.1, 0.2]), ([0.5, 1], [0.6, 0.1])],
)
def test_structural_errors(strikes, prices):
    with pytest.raises(QuoteError):
        curve(strikes, prices)


def test_unequal_grids_rejected():
    with pytest.raises(QuoteError):
        QuoteSurface(curve([0, 1], [1, 0.1]), curve([0, 2], [1, 0.1], 1.0))


def test_interpolation_examples():
    assert interpolate_call(curve([0, 1, 2], [1, 0.1, 0]), 1.0) == 0.1
    assert interpolate_call(curve([0, 1], [1, 0.1]), 0.5) == pytest.approx(0.55, abs=1e-15)
    assert interpolate_call(curve([0, 1, 2], [1, 0.1, 0]), 1.5) == pytest.approx(0.05, abs=1e-15)


def test_interpolation_domain():
    with pytest.raises(ValueError):
        interpolate_call(curve([0, 1, 2], [1, 0.1, 0]), 2.5)


def test_extrapolation_zero_examples():
    assert extrapolation_zero(curve([0, 1.5, 2], [1, 0.05, 0.02])) == pytest.approx(2 + 0.02 / 0.06, rel=1e-13)
    assert extrapolation_zero(curve([0, 1, 2], [1, 0.1, 0])) == 2.0
    assert extrapolation_zero(curve([0, 1, 2], [1, 0.1, 0.05])) == pytest.approx(3.0, rel=1e-13)


def test_extrapolation_zero_flat_tail_is_an_error():
    with pytest.raises(ValueError, match="no finite extrapolated zero"):
        extrapolation_zero(curve([0, 1, 2], [1, 0.1, 0.1]))


@settings(max_examples=40, deadline=None)
@given(
    sigma=st.floats(0.05, 0.6),
    strikes=st.lists(st.floats(0.05, 3.0), min_size=1, max_size=10, unique=True),
)
def test_model_quotes_always_valid(sigma, strikes):
    grid = np.concatenate([[0.0], np.unique(np.round(strikes, 6))])
    s = quote_surface(BsParams(1.0, sigma, 0.0), grid, 0.5, 1.0)
    assert validate_quotes(s) == []
    c = s.curve_T
    if c.prices[-1] > 1e-12:  # below that the shift is lost to rounding
        assert extrapolation_zero(c) > c.strikes[-1]
    # interpolant is convex and nonincreasing on a fine grid
    k = np.linspace(0, grid[-1], 301)
    v = interpolate_call(c, k)
    assert np.all(np.diff(v) <= 1e-12)
    assert np.all(np.diff(v, 2) >= -1e-12)


def test_csv_roundtrip_is_lossless():
    s = quote_surface(BsParams(1.0, 0.2, 0.0), [0, 0.7, 1.0, 1.3], 0.5, 1.0)
    text = write_quotes_csv(s)
    assert text.splitlines()[0] == "maturity,strike,price"
    back = read_quotes_csv(text)
    np.testing.assert_array_equal(back.curve_t1.prices, s.curve_t1.prices)
    np.testing.assert_array_equal(back.curve_T.prices, s.curve_T.prices)
    assert back.spot == 1.0
