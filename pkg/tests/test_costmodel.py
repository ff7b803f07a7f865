"""Cost calculators: private hourly model, schedule placement, gas-series costing."""

from datetime import datetime, timedelta, timezone

import pytest

from logchain.costmodel import (
    MAX_SUBMISSIONS_PER_DAY,
    SCENARIOS,
    CostParams,
    GasPriceRecord,
    GasPriceSeries,
    InvalidCount,
    MissingMinute,
    SeriesFormatError,
    breakeven,
    calibrated_fixture_series,
    equidistribute,
    load_fixture_series,
    private_daily_cost,
    public_daily_cost,
    write_cost_curve,
)

START = datetime(2024, 3, 1, tzinfo=timezone.utc)


def constant_series(price, days=1, scenarios=SCENARIOS, step=5):
    records = []
    for day in range(days):
        for minute in range(0, 1440, step):
            for scenario in scenarios:
                records.append(
                    GasPriceRecord(START + timedelta(days=day, minutes=minute), scenario, price)
                )
    return GasPriceSeries(records)


# -- private ------------------------------------------------------------------


def test_private_reproduces_reference_table():
    for s, expected in ((1, 11.14), (2, 11.92), (3, 12.70), (288, 29.09)):
        assert private_daily_cost(s) == pytest.approx(expected, abs=0.05)


def test_private_plateau_at_24():
    params = CostParams()
    plateau = 24 * params.resolved_full_hourly
    assert private_daily_cost(24) == pytest.approx(plateau)
    assert private_daily_cost(100) == pytest.approx(plateau)
    assert private_daily_cost(288) == pytest.approx(plateau)


def test_private_nondecreasing():
    previous = 0.0
    for s in range(1, 300):
        cost = private_daily_cost(s)
        assert cost >= previous
        previous = cost


def test_private_invalid_counts():
    for bad in (0, -3, 1.5, "2", True):
        with pytest.raises(InvalidCount):
            private_daily_cost(bad)


def test_private_custom_rates():
    params = CostParams(full_hourly=2.0, reduced_hourly=1.0)
    assert private_daily_cost(1, params) == pytest.approx(2.0 + 23.0)
    with pytest.raises(ValueError):
        CostParams(full_hourly=-1.0)


# -- schedule -------------------------------------------------------------------


def minute(hh, mm):
    return hh * 60 + mm


def test_equidistribute_examples():
    assert equidistribute(1) == [minute(23, 50)]
    assert equidistribute(2) == [minute(23, 50), minute(11, 50)]
    assert equidistribute(3) == [minute(23, 50), minute(7, 50), minute(15, 50)]


def test_equidistribute_distinct_and_evenly_gapped():
    for s in (1, 2, 3, 7, 11, 24, 96, 287, 288):
        minutes = equidistribute(s)
        assert len(minutes) == s
        assert len(set(minutes)) == s
        assert all(m % 5 == 0 for m in minutes)
        ordered = sorted(minutes)
        gaps = [b - a for a, b in zip(ordered, ordered[1:])]
        gaps.append(1440 - ordered[-1] + ordered[0])
        assert max(gaps) - min(gaps) <= 5, s


def test_equidistribute_bounds():
    with pytest.raises(InvalidCount):
        equidistribute(0)
    with pytest.raises(InvalidCount):
        equidistribute(MAX_SUBMISSIONS_PER_DAY + 1)


# -- public ---------------------------------------------------------------------


def test_public_constant_forty_closed_form():
    series = constant_series(40.0)
    assert public_daily_cost(1, "slow", series) == pytest.approx(4.0468, abs=1e-6)


def test_public_linear_in_submission_count_for_constant_series():
    series = constant_series(17.0)
    unit = public_daily_cost(1, "fast", series)
    for s in (2, 3, 10, 288):
        assert public_daily_cost(s, "fast", series) == pytest.approx(s * unit, rel=1e-9)


def test_public_linear_in_gas_units_and_rate():
    series = constant_series(40.0)
    base = public_daily_cost(2, "average", series)
    doubled_units = CostParams(gas_units_per_sb=670_000)
    doubled_rate = CostParams(gwei_to_usd=6.04e-7)
    assert public_daily_cost(2, "average", series, doubled_units) == pytest.approx(2 * base)
    assert public_daily_cost(2, "average", series, doubled_rate) == pytest.approx(2 * base)


def test_public_minute_average_across_days():
    # one minute sampled on two days at 10 and 30 gwei: the 20 average is used
    records = [
        GasPriceRecord(START.replace(hour=23, minute=50), "slow", 10.0),
        GasPriceRecord(START.replace(hour=23, minute=50) + timedelta(days=1), "slow", 30.0),
    ]
    series = GasPriceSeries(records)
    expected = 20.0 * 335_000 * 3.02e-7
    assert public_daily_cost(1, "slow", series) == pytest.approx(expected)


def test_public_missing_minute():
    # coverage only around noon; the 23:50 submission has no sample within 10 min
    records = [
        GasPriceRecord(START.replace(hour=12, minute=m), "slow", 25.0) for m in range(0, 60, 5)
    ]
    series = GasPriceSeries(records)
    with pytest.raises(MissingMinute):
        public_daily_cost(1, "slow", series)
    with pytest.raises(MissingMinute):
        public_daily_cost(1, "fast", series)  # scenario absent entirely


def test_public_snaps_to_nearest_sample_within_ten_minutes():
    records = [GasPriceRecord(START.replace(hour=23, minute=45), "slow", 50.0)]
    series = GasPriceSeries(records)
    assert public_daily_cost(1, "slow", series) == pytest.approx(50.0 * 335_000 * 3.02e-7)


def test_unknown_scenario_rejected():
    with pytest.raises(SeriesFormatError):
        public_daily_cost(1, "warp", constant_series(10.0))


# -- series validation ------------------------------------------------------------


def test_series_validation():
    with pytest.raises(SeriesFormatError):
        GasPriceSeries([GasPriceRecord(START, "slow", -1.0)])
    with pytest.raises(SeriesFormatError):
        GasPriceSeries([GasPriceRecord(START, "sideways", 1.0)])
    with pytest.raises(SeriesFormatError):
        GasPriceSeries(
            [
                GasPriceRecord(START, "slow", 1.0),
                GasPriceRecord(START - timedelta(minutes=5), "slow", 1.0),
            ]
        )


def test_series_csv_round_trip(tmp_path):
    series = constant_series(12.34, days=1)
    path = tmp_path / "series.csv"
    series.to_csv(path)
    loaded = GasPriceSeries.from_csv(path)
    assert len(loaded) == len(series)
    assert loaded.minute_averages("slow") == pytest.approx(series.minute_averages("slow"))
    (tmp_path / "bad.csv").write_text("time,scn,price\n2024-01-01T00:00:00Z,slow,1\n")
    with pytest.raises(SeriesFormatError):
        GasPriceSeries.from_csv(tmp_path / "bad.csv")


# -- fixture + breakeven ------------------------------------------------------------


def test_fixture_minimum_is_at_23_50():
    series = load_fixture_series()
    for scenario in SCENARIOS:
        averages = series.minute_averages(scenario)
        assert len(averages) == 288  # full 5-minute daily coverage
        assert min(averages, key=averages.get) == minute(23, 50)


def test_fixture_matches_generator():
    generated = calibrated_fixture_series()
    shipped = load_fixture_series()
    for scenario in SCENARIOS:
        assert shipped.minute_averages(scenario) == pytest.approx(
            generated.minute_averages(scenario), abs=1e-3
        )


def test_breakeven_structure_on_fixture():
    series = load_fixture_series()
    assert public_daily_cost(2, "fast", series) == pytest.approx(13.07, abs=0.05)
    assert breakeven("fast", series) == 2
    assert breakeven("fastest", series) == 2
    assert breakeven("average", series) == 3
    assert breakeven("slow", series) == 3


def test_breakeven_extremes():
    expensive = constant_series(1000.0)
    assert breakeven("slow", expensive) == 1
    # at 1 gwei the public schedule costs 29.137 at s=288, just above the
    # 29.093 private plateau, so the crossover sits exactly at the grid's edge
    cheap = constant_series(1.0)
    assert breakeven("slow", cheap) == 288
    # half a gwei keeps public under private across the whole grid
    very_cheap = constant_series(0.5)
    assert breakeven("slow", very_cheap) is None


def test_cost_curve_csv(tmp_path):
    path = tmp_path / "curve.csv"
    write_cost_curve(path, load_fixture_series(), s_values=(1, 2, 3))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "backend,s,daily_usd"
    assert len(lines) == 1 + 3 * (1 + len(SCENARIOS))
