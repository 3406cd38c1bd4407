"""Deterministic synthetic traffic-network generator.

Produces desk-scale continuous and short-count datasets with known
ground-truth AADT: daily volume is base * season(day) * weekday(day) *
(1 + noise), and a station's AADT is the exact mean of its 365 generated
values. An optional planted signal makes one chosen day's counts nearly
noise-free, creating a known best collection day for end-to-end
validation. Identical configs produce bitwise-identical outputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    DAYS_PER_YEAR,
    DailyCountMatrix,
    ShortCountRecord,
    StationKind,
    StationRecord,
    build_valid_day_calendar,
    date_from_day_of_year,
    make_station_id,
)
from .features import combine_functional_class, group_area_type
from .ingest import DEFAULT_STUDY_BOUNDS, BoundingBox

_RAW_CLASSES = {
    "Arterial": ("interstate", "other freeway", "other principal arterial", "minor arterial"),
    "Collector": ("major collector", "minor collector", "local"),
}
_URBAN_SUBTYPES = ("small urban", "urban", "large urban")

DEFAULT_VOLUME_RANGES = {
    ("Arterial", "Urban"): (20000.0, 60000.0),
    ("Arterial", "Rural"): (5000.0, 20000.0),
    ("Collector", "Urban"): (2000.0, 8000.0),
    ("Collector", "Rural"): (200.0, 2000.0),
}

# Mon..Sun multipliers; weekdays run slightly hot, weekends drop off.
DEFAULT_WEEKDAY_PROFILE = (1.0, 1.02, 1.03, 1.01, 1.05, 0.85, 0.72)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the generated network and its daily volumes."""

    n_continuous: int = 60
    n_short: int = 200
    years: tuple[int, ...] = (2022, 2023)
    seed: int = 0
    seasonal_amplitude: float = 0.25
    weekday_profile: tuple[float, ...] = DEFAULT_WEEKDAY_PROFILE
    noise_sigma: float = 0.08
    weekend_spread: float = 0.0  # per-station Fri-Sun multiplier jitter
    group_day_signal: tuple[int, float] | None = None  # (day, strength in [0,1])
    volume_ranges: dict[tuple[str, str], tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_VOLUME_RANGES)
    )
    class_mix: dict[str, float] = field(
        default_factory=lambda: {"Arterial": 0.5, "Collector": 0.5}
    )
    area_mix: dict[str, float] = field(default_factory=lambda: {"Rural": 0.5, "Urban": 0.5})
    summer_bump: tuple[float, int, float] | None = None  # (amplitude, center day, width)
    regions: int = 0  # 0: uniform over the box; >0: stations cluster around metro-like centers
    bounds: BoundingBox = DEFAULT_STUDY_BOUNDS

    def __post_init__(self) -> None:
        if not 0 <= self.seasonal_amplitude < 1:
            raise ValueError("seasonal_amplitude must be in [0, 1)")
        if not 0 <= self.noise_sigma < 1:
            raise ValueError("noise_sigma must be in [0, 1)")
        if not 0 <= self.weekend_spread < 1:
            raise ValueError("weekend_spread must be in [0, 1)")
        if len(self.weekday_profile) != 7 or any(w <= 0 for w in self.weekday_profile):
            raise ValueError("weekday_profile needs 7 positive multipliers")
        if not self.volume_ranges:
            raise ValueError("volume_ranges must not be empty")
        if self.group_day_signal is not None:
            day, strength = self.group_day_signal
            if not 1 <= day <= DAYS_PER_YEAR or not 0 <= strength <= 1:
                raise ValueError("group_day_signal must be (day 1..365, strength 0..1)")
        for mix in (self.class_mix, self.area_mix):
            if not mix or any(p < 0 for p in mix.values()) or sum(mix.values()) <= 0:
                raise ValueError("mix proportions must be non-negative and sum > 0")


def _pick(rng: np.random.Generator, mix: dict[str, float]) -> str:
    names = sorted(mix)
    probs = np.array([mix[n] for n in names], dtype=float)
    return names[int(rng.choice(len(names), p=probs / probs.sum()))]


# Region centers sit on the box diagonal so that latitude and longitude
# separate the metros jointly, the way Texas metros line up I-35/I-45.
_REGION_SPOTS = (
    (0.12, 0.12), (0.88, 0.88), (0.38, 0.38), (0.62, 0.62), (0.25, 0.25),
    (0.75, 0.75), (0.5, 0.5), (0.12, 0.88), (0.88, 0.12),
)


def _draw_coords(rng: np.random.Generator, config: SynthConfig) -> tuple[float, float]:
    b = config.bounds
    lat_span = b.lat_max - b.lat_min
    lon_span = b.lon_max - b.lon_min
    if config.regions <= 0:
        return (
            float(rng.uniform(b.lat_min + 0.01, b.lat_max - 0.01)),
            float(rng.uniform(b.lon_min + 0.01, b.lon_max - 0.01)),
        )
    spot = _REGION_SPOTS[int(rng.integers(config.regions)) % len(_REGION_SPOTS)]
    lat = b.lat_min + spot[0] * lat_span + float(rng.normal(0, 0.04 * lat_span))
    lon = b.lon_min + spot[1] * lon_span + float(rng.normal(0, 0.04 * lon_span))
    return (
        float(np.clip(lat, b.lat_min + 0.01, b.lat_max - 0.01)),
        float(np.clip(lon, b.lon_min + 0.01, b.lon_max - 0.01)),
    )


def generate_network(config: SynthConfig) -> list[StationRecord]:
    """Deterministic station set: continuous stations first, then short ones.

    Stations alternate through the configured years; attributes are drawn
    from the class/area mixes and coordinates land inside the study box.
    """
    if config.n_continuous <= 0 or config.n_short < 0:
        raise ValueError("need n_continuous > 0 and n_short >= 0")
    rng = np.random.default_rng(config.seed)
    stations: list[StationRecord] = []
    seen: set[tuple[str, int]] = set()
    counts = [(config.n_continuous, StationKind.CONTINUOUS), (config.n_short, StationKind.SHORT)]
    for n, kind in counts:
        for i in range(n):
            year = config.years[i % len(config.years)]
            while True:
                lat, lon = _draw_coords(rng, config)
                combined = _pick(rng, config.class_mix)
                area_group = _pick(rng, config.area_mix)
                fclass = _RAW_CLASSES[combined][int(rng.integers(len(_RAW_CLASSES[combined])))]
                area = "rural" if area_group == "Rural" else \
                    _URBAN_SUBTYPES[int(rng.integers(len(_URBAN_SUBTYPES)))]
                sid = make_station_id(lat, lon, fclass)
                if (sid, year) not in seen:
                    break
            seen.add((sid, year))
            lanes = int(rng.integers(2, 7)) if combined == "Arterial" else int(rng.integers(1, 4))
            stations.append(
                StationRecord(sid, lat, lon, fclass, lanes, area, kind, year)
            )
    return stations


def _season(day: np.ndarray, config: SynthConfig) -> np.ndarray:
    s = 1.0 + config.seasonal_amplitude * np.sin(2 * np.pi * (day - 81) / DAYS_PER_YEAR)
    if config.summer_bump is not None:
        amplitude, center, width = config.summer_bump
        s = s + amplitude * np.exp(-(((day - center) / width) ** 2))
    return s


def _weekday_multipliers(year: int, profile: tuple[float, ...]) -> np.ndarray:
    return np.array(
        [profile[date_from_day_of_year(year, d).weekday()] for d in range(1, DAYS_PER_YEAR + 1)]
    )


def _daily_series(
    station: StationRecord, index: int, config: SynthConfig,
    weekday_mult: dict[int, np.ndarray],
    weekend_days: dict[int, np.ndarray],
) -> np.ndarray:
    rng = np.random.default_rng([config.seed, index])
    combined = combine_functional_class(station.functional_class)
    area_group = group_area_type(station.area_type)
    try:
        lo, hi = config.volume_ranges[(combined, area_group)]
    except KeyError:
        raise ValueError(f"no volume range configured for ({combined}, {area_group})")
    base = rng.uniform(lo, hi)
    days = np.arange(1, DAYS_PER_YEAR + 1)
    noise = config.noise_sigma * rng.standard_normal(DAYS_PER_YEAR)
    profile = weekday_mult[station.year].copy()
    if config.weekend_spread > 0:
        # Commuter roads sag on weekends, recreational roads peak: each
        # station gets its own Fri-Sun level, decoupling weekday traffic
        # from the annual average.
        profile[weekend_days[station.year]] *= rng.uniform(
            1.0 - config.weekend_spread, 1.0 + config.weekend_spread
        )
    factors = _season(days, config) * profile * (1.0 + noise)
    series = base * np.clip(factors, 0.0, None)
    if config.group_day_signal is not None:
        # The planted day carries (nearly) the station's annual level, so
        # its counts correlate with AADT far more than an ordinary day's.
        day, strength = config.group_day_signal
        residual = (1.0 - strength) * config.noise_sigma * rng.standard_normal()
        series[day - 1] = series.mean() * max(0.0, 1.0 + residual)
    return series


def generate_counts(
    stations: list[StationRecord], config: SynthConfig
) -> tuple[dict[int, DailyCountMatrix], list[ShortCountRecord], dict[tuple[str, int], float]]:
    """Daily matrices for continuous stations, short-count records, and true AADT.

    The AADT table covers every station-year and always equals the mean of
    that station's 365 generated values. Short stations yield one
    observation each, sampled from the valid days of their year.
    """
    if not stations:
        raise ValueError("no stations to generate counts for")
    years = sorted({s.year for s in stations} | set(config.years))
    weekday_mult = {y: _weekday_multipliers(y, config.weekday_profile) for y in years}
    weekend_days = {
        y: np.array([date_from_day_of_year(y, d).weekday() >= 4
                     for d in range(1, DAYS_PER_YEAR + 1)])
        for y in years
    }
    calendars = {y: build_valid_day_calendar(y) for y in years}
    aadt: dict[tuple[str, int], float] = {}
    per_year_rows: dict[int, list[tuple[str, np.ndarray]]] = {y: [] for y in years}
    short_records: list[ShortCountRecord] = []
    for index, station in enumerate(stations):
        series = _daily_series(station, index, config, weekday_mult, weekend_days)
        aadt[station.key] = float(series.mean())
        if station.kind is StationKind.CONTINUOUS:
            per_year_rows[station.year].append((station.station_id, series))
        else:
            rng = np.random.default_rng([config.seed, index, 1])
            valid_days = calendars[station.year].valid_days()
            day = int(valid_days[int(rng.integers(len(valid_days)))])
            short_records.append(
                ShortCountRecord(
                    station_id=station.station_id,
                    observed_count=float(series[day - 1]),
                    day_of_year=day,
                    year=station.year,
                    aadt=aadt[station.key],
                    latitude=station.latitude,
                    longitude=station.longitude,
                    functional_class=station.functional_class,
                    lanes=station.lanes,
                    area_type=station.area_type,
                )
            )
    matrices = {}
    for year, rows in per_year_rows.items():
        if not rows:
            continue
        ids = [sid for sid, _ in rows]
        values = np.vstack([series for _, series in rows])
        matrices[year] = DailyCountMatrix(
            year, ids, values, np.ones_like(values, dtype=bool)
        )
    return matrices, short_records, aadt


def mask_random_cells(
    matrix: DailyCountMatrix, fraction: float, seed: int, days: list[int] | None = None
) -> DailyCountMatrix:
    """Hide a fraction of observed cells (optionally restricted to given days)."""
    rng = np.random.default_rng(seed)
    mask = matrix.mask.copy()
    eligible = np.argwhere(mask)
    if days is not None:
        day_set = np.zeros(DAYS_PER_YEAR, dtype=bool)
        day_set[[d - 1 for d in days]] = True
        eligible = eligible[day_set[eligible[:, 1]]]
    n_hide = int(round(fraction * len(eligible)))
    if n_hide > 0:
        chosen = eligible[rng.choice(len(eligible), size=n_hide, replace=False)]
        mask[chosen[:, 0], chosen[:, 1]] = False
    return matrix.replace(matrix.values, mask)


def mask_random_blocks(
    matrix: DailyCountMatrix,
    fraction: float,
    seed: int,
    block_range: tuple[int, int] = (14, 60),
) -> DailyCountMatrix:
    """Hide contiguous runs of days per station until ~fraction of cells are gone.

    Mimics sensor outages: whole stretches of a station's year vanish at
    once, which is how real continuous-count data goes missing.
    """
    rng = np.random.default_rng(seed)
    mask = matrix.mask.copy()
    total = int(matrix.mask.sum())
    target_hidden = int(round(fraction * total))
    guard = 0
    while total - int(mask.sum()) < target_hidden and guard < 10000:
        guard += 1
        i = int(rng.integers(matrix.n_stations))
        length = int(rng.integers(block_range[0], block_range[1] + 1))
        start = int(rng.integers(0, DAYS_PER_YEAR - length + 1))
        mask[i, start:start + length] = False
    return matrix.replace(matrix.values, mask)


def write_raw_csvs(
    stations: list[StationRecord],
    matrices: dict[int, DailyCountMatrix],
    short_records: list[ShortCountRecord],
    out_dir: str | Path,
) -> dict[str, Path]:
    """Emit continuous.csv / short.csv / attributes.csv in the ingest schemas."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "continuous": out / "continuous.csv",
        "short": out / "short.csv",
        "attributes": out / "attributes.csv",
    }
    by_key = {s.key: s for s in stations}
    with open(paths["continuous"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "latitude", "longitude", "functional_class",
                         "lanes", "area_type", "date", "hour", "volume"])
        for year in sorted(matrices):
            matrix = matrices[year]
            for i in np.argsort(matrix.station_ids):
                sid = matrix.station_ids[i]
                station = by_key[(sid, year)]
                for d in np.nonzero(matrix.mask[i])[0]:
                    date = date_from_day_of_year(year, int(d) + 1)
                    writer.writerow([
                        sid, repr(float(station.latitude)), repr(float(station.longitude)),
                        station.functional_class, station.lanes, station.area_type,
                        date.isoformat(), "", repr(float(matrix.values[i, d])),
                    ])
    with open(paths["short"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "latitude", "longitude", "functional_class",
                         "lanes", "area_type", "date", "volume_24h", "aadt"])
        for rec in sorted(short_records, key=lambda r: (r.station_id, r.year, r.day_of_year)):
            date = date_from_day_of_year(rec.year, rec.day_of_year)
            writer.writerow([
                rec.station_id, repr(float(rec.latitude)), repr(float(rec.longitude)),
                rec.functional_class, rec.lanes, rec.area_type,
                date.isoformat(), repr(float(rec.observed_count)), repr(float(rec.aadt)),
            ])
    with open(paths["attributes"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "lanes", "area_type"])
        seen: set[str] = set()
        for s in sorted(stations, key=lambda s: s.station_id):
            if s.station_id not in seen:
                seen.add(s.station_id)
                writer.writerow([s.station_id, s.lanes, s.area_type])
    return paths
