"""Domain types, calendar arithmetic, and validity rules shared by every module.

All types are immutable after construction and safe to share across
parallel workers. Daily data is always indexed by ordinal day 1..365;
leap years are rejected outright so that a day index never becomes
ambiguous.
"""

from __future__ import annotations

import calendar as _calendar
import datetime as dt
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

DAYS_PER_YEAR = 365

FUNCTIONAL_CLASSES = (
    "interstate",
    "other freeway",
    "other principal arterial",
    "minor arterial",
    "major collector",
    "minor collector",
    "local",
)

AREA_TYPES = ("rural", "small urban", "urban", "large urban")

# Mon..Thu are collection-eligible weekdays (datetime weekday() encoding).
_VALID_WEEKDAYS = frozenset({0, 1, 2, 3})


class LeapYearError(ValueError):
    """Raised when a leap-year date or year reaches daily-index logic."""


class StationKind(Enum):
    CONTINUOUS = "continuous"
    SHORT = "short"


def make_station_id(latitude: float, longitude: float, functional_class: str) -> str:
    """Deterministic station identity from coordinates and raw class.

    Fixed 6-decimal coordinate precision keeps the id collision-resistant
    at survey precision while staying reproducible across runs.
    """
    return f"{latitude:.6f}|{longitude:.6f}|{functional_class}"


@dataclass(frozen=True)
class StationRecord:
    """One monitored location with its static roadway attributes."""

    station_id: str
    latitude: float
    longitude: float
    functional_class: str
    lanes: int
    area_type: str
    kind: StationKind
    year: int

    def __post_init__(self) -> None:
        if self.functional_class not in FUNCTIONAL_CLASSES:
            raise ValueError(f"unknown functional class: {self.functional_class!r}")
        if self.area_type not in AREA_TYPES:
            raise ValueError(f"unknown area type: {self.area_type!r}")
        if self.lanes < 1:
            raise ValueError(f"lanes must be >= 1, got {self.lanes}")
        expected = make_station_id(self.latitude, self.longitude, self.functional_class)
        if self.station_id != expected:
            raise ValueError(
                f"station_id {self.station_id!r} does not match attributes ({expected!r})"
            )

    @property
    def key(self) -> tuple[str, int]:
        """Station-year unit key; the same location may be observed in both years."""
        return (self.station_id, self.year)

    @classmethod
    def build(
        cls,
        latitude: float,
        longitude: float,
        functional_class: str,
        lanes: int,
        area_type: str,
        kind: StationKind,
        year: int,
    ) -> "StationRecord":
        """Construct with the id derived from (latitude, longitude, class)."""
        return cls(
            station_id=make_station_id(latitude, longitude, functional_class),
            latitude=latitude,
            longitude=longitude,
            functional_class=functional_class,
            lanes=lanes,
            area_type=area_type,
            kind=kind,
            year=year,
        )


@dataclass(frozen=True)
class ShortCountRecord:
    """A 24-hour portable count joined with its published AADT."""

    station_id: str
    observed_count: float
    day_of_year: int
    year: int
    aadt: float
    latitude: float
    longitude: float
    functional_class: str
    lanes: int
    area_type: str

    def __post_init__(self) -> None:
        if not 1 <= self.day_of_year <= DAYS_PER_YEAR:
            raise ValueError(f"day_of_year out of range: {self.day_of_year}")
        if self.aadt <= 0:
            raise ValueError(f"aadt must be > 0, got {self.aadt}")
        if self.observed_count < 0 or not np.isfinite(self.observed_count):
            raise ValueError(f"observed_count must be finite and >= 0, got {self.observed_count}")

    @property
    def key(self) -> tuple[str, int]:
        return (self.station_id, self.year)


class DailyCountMatrix:
    """Wide-format daily volumes: one 365-slot row per station-year.

    ``values[i, d-1]`` is the count at station ``i`` on ordinal day ``d``;
    ``mask[i, d-1]`` is True where that day was observed. Immutable after
    construction (arrays are write-locked).
    """

    def __init__(
        self,
        year: int,
        station_ids: list[str],
        values: np.ndarray,
        mask: np.ndarray,
    ) -> None:
        if _calendar.isleap(year):
            raise LeapYearError(f"leap year {year} is not supported")
        values = np.asarray(values, dtype=float)
        mask = np.asarray(mask, dtype=bool)
        n = len(station_ids)
        if values.shape != (n, DAYS_PER_YEAR) or mask.shape != (n, DAYS_PER_YEAR):
            raise ValueError(
                f"expected {n}x{DAYS_PER_YEAR} values/mask, got {values.shape} and {mask.shape}"
            )
        observed = values[mask]
        if observed.size and (not np.all(np.isfinite(observed)) or np.any(observed < 0)):
            raise ValueError("observed values must be finite and >= 0")
        if len(set(station_ids)) != n:
            raise ValueError("duplicate station ids in matrix")
        self.year = year
        self.station_ids = list(station_ids)
        self.values = values
        self.mask = mask
        self.values.setflags(write=False)
        self.mask.setflags(write=False)
        self._index = {sid: i for i, sid in enumerate(self.station_ids)}

    @property
    def n_stations(self) -> int:
        return len(self.station_ids)

    def row(self, station_id: str) -> int:
        return self._index[station_id]

    def replace(self, values: np.ndarray, mask: np.ndarray) -> "DailyCountMatrix":
        """New matrix with the same stations/year and different cells."""
        return DailyCountMatrix(self.year, self.station_ids, values, mask)


@dataclass(frozen=True)
class ValidDayCalendar:
    """Which ordinal days of a year are eligible for short-count collection.

    A day is valid when it falls on Monday..Thursday and is neither the
    actual nor the observed date of a U.S. federal holiday.
    """

    year: int
    valid: tuple[bool, ...] = field(repr=False)

    def __post_init__(self) -> None:
        if len(self.valid) != DAYS_PER_YEAR:
            raise ValueError("calendar must cover exactly 365 days")

    def is_valid(self, day_of_year: int) -> bool:
        return self.valid[day_of_year - 1]

    def valid_days(self) -> list[int]:
        return [d for d in range(1, DAYS_PER_YEAR + 1) if self.valid[d - 1]]

    def mask_array(self) -> np.ndarray:
        return np.array(self.valid, dtype=bool)


def day_of_year(date: dt.date) -> int:
    """Ordinal day 1..365 of a date in a non-leap year."""
    if _calendar.isleap(date.year):
        raise LeapYearError(f"{date.isoformat()} falls in a leap year")
    return date.timetuple().tm_yday


def date_from_day_of_year(year: int, day: int) -> dt.date:
    """Inverse of day_of_year; round-trips for every day of a non-leap year."""
    if _calendar.isleap(year):
        raise LeapYearError(f"leap year {year} is not supported")
    if not 1 <= day <= DAYS_PER_YEAR:
        raise ValueError(f"day out of range: {day}")
    return dt.date(year, 1, 1) + dt.timedelta(days=day - 1)


def _nth_weekday(year: int, month: int, weekday: int, n: int) -> dt.date:
    first = dt.date(year, month, 1)
    offset = (weekday - first.weekday()) % 7
    return first + dt.timedelta(days=offset + 7 * (n - 1))


def _last_weekday(year: int, month: int, weekday: int) -> dt.date:
    if month == 12:
        last = dt.date(year, 12, 31)
    else:
        last = dt.date(year, month + 1, 1) - dt.timedelta(days=1)
    return last - dt.timedelta(days=(last.weekday() - weekday) % 7)


def _observed(date: dt.date) -> dt.date:
    # Saturday holidays are observed the preceding Friday, Sunday the
    # following Monday (federal observation rules).
    if date.weekday() == 5:
        return date - dt.timedelta(days=1)
    if date.weekday() == 6:
        return date + dt.timedelta(days=1)
    return date


def us_federal_holidays(year: int) -> set[dt.date]:
    """All statutory U.S. federal holidays of a year, actual and observed.

    When a fixed-date holiday falls on a weekend, both the actual date and
    the shifted observed date are returned; an observed date may spill into
    the adjacent year (e.g. a Saturday January 1 observed on December 31).
    """
    if not 1971 <= year <= 2099:
        raise ValueError(f"year out of supported range 1971..2099: {year}")
    fixed = [dt.date(year, 1, 1), dt.date(year, 7, 4), dt.date(year, 11, 11), dt.date(year, 12, 25)]
    if year >= 2021:
        fixed.append(dt.date(year, 6, 19))
    floating = [
        _nth_weekday(year, 1, 0, 3),    # Martin Luther King Jr. Day
        _nth_weekday(year, 2, 0, 3),    # Washington's Birthday
        _last_weekday(year, 5, 0),      # Memorial Day
        _nth_weekday(year, 9, 0, 1),    # Labor Day
        _nth_weekday(year, 10, 0, 2),   # Columbus Day
        _nth_weekday(year, 11, 3, 4),   # Thanksgiving
    ]
    dates: set[dt.date] = set(floating)
    for d in fixed:
        dates.add(d)
        dates.add(_observed(d))
    return dates


def build_valid_day_calendar(year: int) -> ValidDayCalendar:
    """Valid-day calendar for a non-leap study year.

    Marks every Friday, Saturday, Sunday, and every federal holiday date
    (actual or observed) that lands inside the year as invalid. Holidays of
    the following year are also consulted because a Saturday January 1 is
    observed on the preceding December 31.
    """
    if _calendar.isleap(year):
        raise LeapYearError(f"leap year {year} is not supported")
    holiday_dates = us_federal_holidays(year)
    if year + 1 <= 2099:
        holiday_dates |= us_federal_holidays(year + 1)
    in_year = {d for d in holiday_dates if d.year == year}
    valid = []
    for day in range(1, DAYS_PER_YEAR + 1):
        date = date_from_day_of_year(year, day)
        valid.append(date.weekday() in _VALID_WEEKDAYS and date not in in_year)
    return ValidDayCalendar(year=year, valid=tuple(valid))
