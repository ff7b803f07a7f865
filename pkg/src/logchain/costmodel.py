"""Daily cost-of-ownership calculators for the two anchoring strategies.

The private backend bills by the hour: a full-rate hour for every hour with a
submission, a reduced rate for idle hours, an IP allocation folded into both,
and a flat ceiling of 24 full hours once every hour has a submission.

The public backend bills per transaction at the gas price in force when the
transaction is signed. Submissions are equidistributed around the clock
starting at 23:50 UTC (where gas is cheapest day after day); the cost of a
schedule is the sum of the per-minute-of-day average gas prices at those
times, converted through the fixed contract gas usage and the gwei/USD rate.

The shipped fixture series is synthetic: a daily-seasonal gas-price profile
per speed scenario with its minimum at 23:50 UTC, calibrated so the low-end
daily costs (and therefore the private-vs-public breakeven structure) match
this module's reference cost table. Real multi-week price history can be
substituted through the same CSV schema: timestamp_iso,scenario,gwei.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

SCENARIOS = ("slow", "average", "fast", "fastest")

ANCHOR_MINUTE = 23 * 60 + 50  # cheapest gas minute, start of every schedule
GRID_MINUTES = 5
MINUTES_PER_DAY = 24 * 60
MAX_SUBMISSIONS_PER_DAY = MINUTES_PER_DAY // GRID_MINUTES

BASE_FULL_HOURLY_USD = 1.19
BASE_REDUCED_HOURLY_USD = 0.41

FIXTURE_FILE = "gas_prices.csv"

# USD/day at 1, 2 and 3 submissions per day that the synthetic fixture series
# is calibrated to reproduce, per speed scenario
REFERENCE_DAILY_COSTS = {
    "slow": (4.07, 10.31, 17.54),
    "average": (4.37, 11.54, 19.41),
    "fast": (4.90, 13.07, 21.26),
    "fastest": (5.86, 14.52, 23.91),
}


class CostModelError(Exception):
    pass


class InvalidCount(CostModelError):
    """Submission count out of range."""


class MissingMinute(CostModelError):
    """The series has no sample close enough to a required submission minute."""


class SeriesFormatError(CostModelError):
    pass


@dataclass(frozen=True)
class CostParams:
    """All knobs of both calculators; every default is overridable."""

    ip_monthly: float = 16.00
    full_hourly: float | None = None  # None -> 1.19 + hourly ip share
    reduced_hourly: float | None = None  # None -> 0.41 + hourly ip share
    gas_units_per_sb: int = 335_000
    gwei_to_usd: float = 3.02e-7

    def __post_init__(self) -> None:
        for name in ("ip_monthly", "gas_units_per_sb", "gwei_to_usd"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("full_hourly", "reduced_hourly"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def ip_hourly(self) -> float:
        return self.ip_monthly / 30 / 24

    @property
    def resolved_full_hourly(self) -> float:
        return self.full_hourly if self.full_hourly is not None else BASE_FULL_HOURLY_USD + self.ip_hourly

    @property
    def resolved_reduced_hourly(self) -> float:
        return (
            self.reduced_hourly
            if self.reduced_hourly is not None
            else BASE_REDUCED_HOURLY_USD + self.ip_hourly
        )


def _check_count(s: int, upper: int | None = None) -> None:
    if isinstance(s, bool) or not isinstance(s, int) or s < 1:
        raise InvalidCount(f"submissions per day must be a positive integer, got {s!r}")
    if upper is not None and s > upper:
        raise InvalidCount(f"at most {upper} submissions fit the {GRID_MINUTES}-minute grid")


def private_daily_cost(s: int, params: CostParams = CostParams()) -> float:
    """Daily USD for the fixed-infrastructure backend at s submissions/day.

    Below 24 submissions each submission hour bills full rate and the rest
    bill reduced rate; from 24 up, all 24 hours bill full rate (the plateau).
    """
    _check_count(s)
    full = params.resolved_full_hourly
    reduced = params.resolved_reduced_hourly
    if s < 24:
        return s * full + (24 - s) * reduced
    return 24 * full


def equidistribute(s: int, anchor_minute: int = ANCHOR_MINUTE) -> list[int]:
    """Spread s daily submissions 1440/s minutes apart starting at the anchor.

    Each raw time snaps to the nearest 5-minute grid point; results are
    minutes of day in schedule order (the anchor first).
    """
    _check_count(s, upper=MAX_SUBMISSIONS_PER_DAY)
    if not 0 <= anchor_minute < MINUTES_PER_DAY:
        raise InvalidCount(f"anchor minute must be in [0, {MINUTES_PER_DAY})")
    interval = MINUTES_PER_DAY / s
    minutes = []
    for i in range(s):
        raw = (anchor_minute + i * interval) % MINUTES_PER_DAY
        snapped = int(math.floor(raw / GRID_MINUTES + 0.5)) * GRID_MINUTES % MINUTES_PER_DAY
        minutes.append(snapped)
    return minutes


@dataclass(frozen=True)
class GasPriceRecord:
    timestamp: datetime
    scenario: str
    gas_price: float


class GasPriceSeries:
    """Timestamped gas quotes per speed scenario."""

    def __init__(self, records: Iterable[GasPriceRecord]):
        self.records = list(records)
        previous: datetime | None = None
        for record in self.records:
            if record.scenario not in SCENARIOS:
                raise SeriesFormatError(f"unknown scenario {record.scenario!r}")
            if record.gas_price <= 0:
                raise SeriesFormatError(f"gas price must be positive, got {record.gas_price}")
            if previous is not None and record.timestamp < previous:
                raise SeriesFormatError("timestamps must be non-decreasing")
            previous = record.timestamp

    def __len__(self) -> int:
        return len(self.records)

    def minute_averages(self, scenario: str) -> dict[int, float]:
        """Mean gas price per minute-of-day for one scenario."""
        sums: dict[int, float] = {}
        counts: dict[int, int] = {}
        for record in self.records:
            if record.scenario != scenario:
                continue
            minute = record.timestamp.hour * 60 + record.timestamp.minute
            sums[minute] = sums.get(minute, 0.0) + record.gas_price
            counts[minute] = counts.get(minute, 0) + 1
        return {minute: sums[minute] / counts[minute] for minute in sums}

    @classmethod
    def from_csv(cls, path: str | Path) -> "GasPriceSeries":
        records = []
        with open(path, newline="") as handle:
            reader = csv.DictReader(handle)
            if reader.fieldnames != ["timestamp_iso", "scenario", "gwei"]:
                raise SeriesFormatError(
                    f"{path}: expected header timestamp_iso,scenario,gwei, got {reader.fieldnames}"
                )
            for row in reader:
                records.append(
                    GasPriceRecord(
                        timestamp=_parse_iso(row["timestamp_iso"]),
                        scenario=row["scenario"],
                        gas_price=float(row["gwei"]),
                    )
                )
        return cls(records)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["timestamp_iso", "scenario", "gwei"])
            for record in self.records:
                writer.writerow(
                    [
                        record.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
                        record.scenario,
                        f"{record.gas_price:.4f}",
                    ]
                )


def _parse_iso(raw: str) -> datetime:
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError as exc:
        raise SeriesFormatError(f"bad timestamp {raw!r}: {exc}") from exc
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def _circular_distance(a: int, b: int) -> int:
    d = abs(a - b) % MINUTES_PER_DAY
    return min(d, MINUTES_PER_DAY - d)


def public_daily_cost(
    s: int,
    scenario: str,
    series: GasPriceSeries,
    params: CostParams = CostParams(),
) -> float:
    """Daily USD for the gas-priced backend at s equidistributed submissions.

    Sums the minute-of-day average gas price at each scheduled minute, then
    converts: sum [gwei] * gas units per submission * USD per gwei.
    """
    if scenario not in SCENARIOS:
        raise SeriesFormatError(f"unknown scenario {scenario!r}")
    averages = series.minute_averages(scenario)
    if not averages:
        raise MissingMinute(f"series has no records for scenario {scenario!r}")
    total_gwei = 0.0
    for minute in equidistribute(s):
        if minute in averages:
            total_gwei += averages[minute]
            continue
        nearest = min(averages, key=lambda m: _circular_distance(m, minute))
        if _circular_distance(nearest, minute) > 10:
            raise MissingMinute(
                f"no {scenario} sample within 10 minutes of {minute // 60:02d}:{minute % 60:02d}"
            )
        total_gwei += averages[nearest]
    return total_gwei * params.gas_units_per_sb * params.gwei_to_usd


def breakeven(
    scenario: str,
    series: GasPriceSeries,
    params: CostParams = CostParams(),
    max_s: int = MAX_SUBMISSIONS_PER_DAY,
) -> int | None:
    """Smallest daily submission count at which the private backend is cheaper."""
    for s in range(1, max_s + 1):
        if private_daily_cost(s, params) < public_daily_cost(s, scenario, series, params):
            return s
    return None


# ---------------------------------------------------------------------------
# synthetic fixture series

def _daily_profile(scenario: str, params: CostParams) -> dict[int, float]:
    """Per-minute gas-price curve whose schedule costs hit the reference figures.

    The s=1/2/3 schedules touch minutes 23:50, 11:50, and 07:50/15:50, which
    pins the curve at those four minutes; everything between is linear on the
    circular day, giving a double-humped curve with its minimum at 23:50.
    """
    cost1, cost2, cost3 = REFERENCE_DAILY_COSTS[scenario]
    unit = params.gas_units_per_sb * params.gwei_to_usd
    anchor_price = cost1 / unit
    opposite_price = cost2 / unit - anchor_price
    third_price = (cost3 / unit - anchor_price) / 2
    anchors = [(470, third_price), (710, opposite_price), (950, third_price), (1430, anchor_price)]
    profile: dict[int, float] = {}
    for minute in range(0, MINUTES_PER_DAY, GRID_MINUTES):
        before = max(anchors, key=lambda a: a[0] if a[0] <= minute else a[0] - MINUTES_PER_DAY)
        after = min(anchors, key=lambda a: a[0] if a[0] >= minute else a[0] + MINUTES_PER_DAY)
        if before[0] == after[0]:
            profile[minute] = before[1]
            continue
        span = (after[0] - before[0]) % MINUTES_PER_DAY
        offset = (minute - before[0]) % MINUTES_PER_DAY
        profile[minute] = before[1] + (after[1] - before[1]) * offset / span
    return profile


def calibrated_fixture_series(
    days: int = 3,
    seed: int = 20,
    params: CostParams = CostParams(),
    start: datetime = datetime(2024, 1, 1, tzinfo=timezone.utc),
) -> GasPriceSeries:
    """Synthetic multi-day series with daily seasonality and a 23:50 UTC minimum.

    Day-to-day jitter comes in a (+d, -d, 0) pattern so minute-of-day averages
    equal the calibrated profile exactly; days must be a multiple of 3.
    """
    if days < 1 or days % 3:
        raise ValueError("days must be a positive multiple of 3 for jitter to cancel")
    rng = random.Random(seed)
    profiles = {scenario: _daily_profile(scenario, params) for scenario in SCENARIOS}
    jitter = {
        scenario: {
            minute: rng.uniform(0.0, 0.02) * price
            for minute, price in profiles[scenario].items()
        }
        for scenario in SCENARIOS
    }
    records = []
    for day in range(days):
        sign = (1.0, -1.0, 0.0)[day % 3]
        for minute in range(0, MINUTES_PER_DAY, GRID_MINUTES):
            timestamp = start + timedelta(days=day, minutes=minute)
            for scenario in SCENARIOS:
                price = profiles[scenario][minute] + sign * jitter[scenario][minute]
                records.append(GasPriceRecord(timestamp, scenario, round(price, 4)))
    return GasPriceSeries(records)


def fixture_series_path() -> Path:
    return Path(str(resources.files("logchain") / "fixtures" / FIXTURE_FILE))


def load_fixture_series() -> GasPriceSeries:
    return GasPriceSeries.from_csv(fixture_series_path())


def write_cost_curve(
    path: str | Path,
    series: GasPriceSeries,
    params: CostParams = CostParams(),
    s_values: Sequence[int] = (1, 2, 3, 6, 12, 24, 48, 96, 144, 288),
) -> None:
    """Long-format CSV of daily cost per backend/scenario for plotting."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["backend", "s", "daily_usd"])
        for s in s_values:
            writer.writerow(["private", s, f"{private_daily_cost(s, params):.4f}"])
        for scenario in SCENARIOS:
            for s in s_values:
                writer.writerow(
                    [scenario, s, f"{public_daily_cost(s, scenario, series, params):.4f}"]
                )
