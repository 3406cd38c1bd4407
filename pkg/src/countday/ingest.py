"""Raw count-file parsing and shaping into wide-format daily matrices.

Malformed rows are never silently dropped: each one lands in a rejects
report with its file, line number, and reason. Schema problems (a missing
column) raise SchemaError instead, since no row of such a file can be
trusted.
"""

from __future__ import annotations

import csv
import datetime as dt
from calendar import isleap
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import (
    DAYS_PER_YEAR,
    AREA_TYPES,
    DailyCountMatrix,
    FUNCTIONAL_CLASSES,
    ShortCountRecord,
    StationKind,
    StationRecord,
    ValidDayCalendar,
    day_of_year,
    date_from_day_of_year,
    make_station_id,
)

CONTINUOUS_COLUMNS = (
    "station_id", "latitude", "longitude", "functional_class",
    "lanes", "area_type", "date", "volume",
)
SHORT_COLUMNS = (
    "station_id", "latitude", "longitude", "functional_class",
    "lanes", "area_type", "date", "volume_24h", "aadt",
)
ATTRIBUTE_COLUMNS = ("station_id", "lanes", "area_type")

SCHEMAS = ("continuous", "short", "attributes")


class SchemaError(ValueError):
    """A file-level contract violation: unusable header or missing input."""


@dataclass(frozen=True)
class BoundingBox:
    """Study-area limits applied to station coordinates at ingest."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def contains(self, latitude: float, longitude: float) -> bool:
        return (
            self.lat_min <= latitude <= self.lat_max
            and self.lon_min <= longitude <= self.lon_max
        )


# Default study box roughly covering Texas.
DEFAULT_STUDY_BOUNDS = BoundingBox(25.5, 36.8, -106.8, -93.3)


@dataclass(frozen=True)
class LongCountRow:
    """One raw count observation; hour is None for pre-aggregated daily rows."""

    station_id: str
    date: dt.date
    hour: int | None
    volume: float


@dataclass(frozen=True)
class Reject:
    input_file: str
    line_number: int
    reason: str


@dataclass
class ParseResult:
    """Typed records plus the rejects gathered while reading one file."""

    rows: list[LongCountRow] = field(default_factory=list)
    stations: list[StationRecord] = field(default_factory=list)
    short_records: list[ShortCountRecord] = field(default_factory=list)
    attributes: dict[str, tuple[int, str]] = field(default_factory=dict)
    rejects: list[Reject] = field(default_factory=list)


def _check_header(reader: csv.DictReader, required: tuple[str, ...], path: str) -> None:
    fields = reader.fieldnames
    if fields is None:
        raise SchemaError(f"{path}: empty file, no header")
    missing = [c for c in required if c not in fields]
    if missing:
        raise SchemaError(f"{path}: missing required column(s): {', '.join(missing)}")


def _parse_common_attrs(row: dict, bounds: BoundingBox) -> tuple[float, float, str, int, str]:
    lat = float(row["latitude"])
    lon = float(row["longitude"])
    if not (np.isfinite(lat) and np.isfinite(lon)):
        raise ValueError("non-finite coordinates")
    if not bounds.contains(lat, lon):
        raise ValueError(f"coordinates ({lat}, {lon}) outside study bounds")
    fclass = row["functional_class"].strip()
    if fclass not in FUNCTIONAL_CLASSES:
        raise ValueError(f"unknown functional class {fclass!r}")
    lanes = int(row["lanes"])
    if lanes < 1:
        raise ValueError(f"lanes must be >= 1, got {lanes}")
    area = row["area_type"].strip()
    if area not in AREA_TYPES:
        raise ValueError(f"unknown area type {area!r}")
    expected_id = make_station_id(lat, lon, fclass)
    if row["station_id"].strip() != expected_id:
        raise ValueError("station_id does not match coordinates and class")
    return lat, lon, fclass, lanes, area


def _parse_date(text: str) -> dt.date:
    date = dt.date.fromisoformat(text.strip())
    if isleap(date.year):
        raise ValueError(f"leap-year date {date.isoformat()} not supported")
    return date


def parse_continuous_file(path: str | Path, bounds: BoundingBox = DEFAULT_STUDY_BOUNDS) -> ParseResult:
    """Read a continuous-station count file into long rows and station records."""
    result = ParseResult()
    seen_stations: dict[tuple[str, int], StationRecord] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, CONTINUOUS_COLUMNS, str(path))
        has_hour = "hour" in reader.fieldnames
        for row in reader:
            try:
                lat, lon, fclass, lanes, area = _parse_common_attrs(row, bounds)
                date = _parse_date(row["date"])
                hour_text = (row.get("hour") or "").strip() if has_hour else ""
                hour = None
                if hour_text:
                    hour = int(hour_text)
                    if not 0 <= hour <= 23:
                        raise ValueError(f"hour out of range: {hour}")
                volume = float(row["volume"])
                if not np.isfinite(volume):
                    raise ValueError("non-finite volume")
                if volume < 0:
                    raise ValueError("negative volume")
            except ValueError as exc:
                result.rejects.append(Reject(str(path), reader.line_num, str(exc)))
                continue
            sid = row["station_id"].strip()
            key = (sid, date.year)
            station = StationRecord(sid, lat, lon, fclass, lanes, area,
                                    StationKind.CONTINUOUS, date.year)
            known = seen_stations.get(key)
            if known is None:
                seen_stations[key] = station
                result.stations.append(station)
            elif known != station:
                result.rejects.append(
                    Reject(str(path), reader.line_num, "conflicting station attributes")
                )
                continue
            result.rows.append(LongCountRow(sid, date, hour, volume))
    return result


def parse_short_file(path: str | Path, bounds: BoundingBox = DEFAULT_STUDY_BOUNDS) -> ParseResult:
    """Read a short-count file: each row is a 24h count already joined with AADT."""
    result = ParseResult()
    seen_stations: dict[tuple[str, int], StationRecord] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, SHORT_COLUMNS, str(path))
        for row in reader:
            try:
                lat, lon, fclass, lanes, area = _parse_common_attrs(row, bounds)
                date = _parse_date(row["date"])
                volume = float(row["volume_24h"])
                if not np.isfinite(volume) or volume < 0:
                    raise ValueError("negative volume")
                aadt = float(row["aadt"])
                if not np.isfinite(aadt) or aadt <= 0:
                    raise ValueError(f"aadt must be > 0, got {row['aadt']}")
                record = ShortCountRecord(
                    station_id=row["station_id"].strip(),
                    observed_count=volume,
                    day_of_year=day_of_year(date),
                    year=date.year,
                    aadt=aadt,
                    latitude=lat,
                    longitude=lon,
                    functional_class=fclass,
                    lanes=lanes,
                    area_type=area,
                )
            except ValueError as exc:
                result.rejects.append(Reject(str(path), reader.line_num, str(exc)))
                continue
            key = record.key
            if key not in seen_stations:
                station = StationRecord(record.station_id, lat, lon, fclass, lanes, area,
                                        StationKind.SHORT, record.year)
                seen_stations[key] = station
                result.stations.append(station)
            result.short_records.append(record)
    return result


def parse_attributes_file(path: str | Path) -> ParseResult:
    """Read the static-attributes override table keyed by station_id."""
    result = ParseResult()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, ATTRIBUTE_COLUMNS, str(path))
        for row in reader:
            sid = row["station_id"].strip()
            try:
                lanes = int(row["lanes"])
                if lanes < 1:
                    raise ValueError(f"lanes must be >= 1, got {lanes}")
                area = row["area_type"].strip()
                if area not in AREA_TYPES:
                    raise ValueError(f"unknown area type {area!r}")
                if sid in result.attributes:
                    raise ValueError(f"duplicate station_id {sid!r}")
            except ValueError as exc:
                result.rejects.append(Reject(str(path), reader.line_num, str(exc)))
                continue
            result.attributes[sid] = (lanes, area)
    return result


def parse_count_file(
    path: str | Path, schema: str, bounds: BoundingBox = DEFAULT_STUDY_BOUNDS
) -> ParseResult:
    """Parse one input file according to its declared schema."""
    if schema == "continuous":
        return parse_continuous_file(path, bounds)
    if schema == "short":
        return parse_short_file(path, bounds)
    if schema == "attributes":
        return parse_attributes_file(path)
    raise ValueError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")


def apply_attribute_overrides(
    stations: list[StationRecord],
    short_records: list[ShortCountRecord],
    attributes: dict[str, tuple[int, str]],
) -> tuple[list[StationRecord], list[ShortCountRecord]]:
    """Override lanes/area_type wherever the attributes table lists the station."""
    new_stations = []
    for s in stations:
        if s.station_id in attributes:
            lanes, area = attributes[s.station_id]
            s = replace(s, lanes=lanes, area_type=area)
        new_stations.append(s)
    new_records = []
    for r in short_records:
        if r.station_id in attributes:
            lanes, area = attributes[r.station_id]
            r = replace(r, lanes=lanes, area_type=area)
        new_records.append(r)
    return new_stations, new_records


def aggregate_hourly_to_daily(
    rows: Iterable[LongCountRow],
) -> tuple[list[LongCountRow], list[tuple[str, dt.date, int]]]:
    """Sum hourly rows to daily totals.

    A station-date must either carry one daily row or hourly rows; all 24
    hours are required for a daily total, otherwise the day is reported as
    incomplete (station_id, date, hours_present) and yields no daily row.
    """
    groups: dict[tuple[str, dt.date], list[LongCountRow]] = {}
    for row in rows:
        groups.setdefault((row.station_id, row.date), []).append(row)
    daily: list[LongCountRow] = []
    incomplete: list[tuple[str, dt.date, int]] = []
    for (sid, date), members in sorted(groups.items(), key=lambda kv: kv[0]):
        hours = [m.hour for m in members]
        if any(h is None for h in hours):
            if any(h is not None for h in hours):
                raise ValueError(f"mixed hourly/daily rows for station {sid} on {date.isoformat()}")
            if len(members) > 1:
                raise ValueError(f"duplicate daily rows for station {sid} on {date.isoformat()}")
            daily.append(members[0])
            continue
        distinct = set(hours)
        if len(distinct) != len(hours):
            raise ValueError(f"duplicate hourly rows for station {sid} on {date.isoformat()}")
        if len(distinct) < 24:
            incomplete.append((sid, date, len(distinct)))
            continue
        total = sum(m.volume for m in members)
        daily.append(LongCountRow(sid, date, None, total))
    return daily, incomplete


def pivot_to_wide(daily_rows: Iterable[LongCountRow], year: int) -> DailyCountMatrix:
    """Long daily rows to one wide row per station; absent days stay masked off."""
    rows = list(daily_rows)
    for row in rows:
        if row.date.year != year:
            raise ValueError(f"row dated {row.date.isoformat()} does not belong to {year}")
        if row.hour is not None:
            raise ValueError("pivot expects daily rows; aggregate hourly rows first")
    station_ids = sorted({r.station_id for r in rows})
    index = {sid: i for i, sid in enumerate(station_ids)}
    values = np.zeros((len(station_ids), DAYS_PER_YEAR))
    mask = np.zeros((len(station_ids), DAYS_PER_YEAR), dtype=bool)
    for row in rows:
        i = index[row.station_id]
        d = day_of_year(row.date) - 1
        if mask[i, d]:
            raise ValueError(
                f"duplicate daily value for station {row.station_id} on {row.date.isoformat()}"
            )
        values[i, d] = row.volume
        mask[i, d] = True
    return DailyCountMatrix(year, station_ids, values, mask)


def unpivot(matrix: DailyCountMatrix) -> list[LongCountRow]:
    """Inverse of pivot_to_wide over observed cells (lossless round trip)."""
    rows = []
    for i, sid in enumerate(matrix.station_ids):
        for d in np.nonzero(matrix.mask[i])[0]:
            rows.append(
                LongCountRow(sid, date_from_day_of_year(matrix.year, int(d) + 1),
                             None, float(matrix.values[i, d]))
            )
    return rows


@dataclass(frozen=True)
class ShortCountObservation:
    """A short count not yet joined with its published AADT."""

    station_id: str
    observed_count: float
    day_of_year: int
    year: int
    latitude: float
    longitude: float
    functional_class: str
    lanes: int
    area_type: str


@dataclass(frozen=True)
class MergeReport:
    merged: int
    dropped_unmatched: int
    dropped_invalid: int


def merge_short_counts(
    counts: Iterable[ShortCountObservation],
    aadt_table: Iterable[tuple[str, float]],
) -> tuple[list[ShortCountRecord], MergeReport]:
    """Inner-join short counts with published AADT on the location id.

    Counts lacking an AADT row (or joining to a non-positive AADT) are
    dropped and tallied; duplicate AADT keys are ambiguous ground truth
    and raise.
    """
    table: dict[str, float] = {}
    for sid, aadt in aadt_table:
        if sid in table:
            raise ValueError(f"duplicate AADT entry for station {sid!r}")
        table[sid] = float(aadt)
    merged: list[ShortCountRecord] = []
    dropped_unmatched = 0
    dropped_invalid = 0
    for obs in counts:
        aadt = table.get(obs.station_id)
        if aadt is None:
            dropped_unmatched += 1
            continue
        if not np.isfinite(aadt) or aadt <= 0:
            dropped_invalid += 1
            continue
        merged.append(
            ShortCountRecord(
                station_id=obs.station_id,
                observed_count=obs.observed_count,
                day_of_year=obs.day_of_year,
                year=obs.year,
                aadt=aadt,
                latitude=obs.latitude,
                longitude=obs.longitude,
                functional_class=obs.functional_class,
                lanes=obs.lanes,
                area_type=obs.area_type,
            )
        )
    return merged, MergeReport(len(merged), dropped_unmatched, dropped_invalid)


def filter_to_valid_days(matrix: DailyCountMatrix, calendar: ValidDayCalendar) -> DailyCountMatrix:
    """Mask off every cell falling on an invalid collection day."""
    if matrix.year != calendar.year:
        raise ValueError(f"matrix year {matrix.year} != calendar year {calendar.year}")
    mask = matrix.mask & calendar.mask_array()[None, :]
    return matrix.replace(matrix.values, mask)


def filter_short_records(
    records: Iterable[ShortCountRecord], calendars: dict[int, ValidDayCalendar]
) -> tuple[list[ShortCountRecord], int]:
    """Drop short counts taken on invalid days; returns (kept, dropped count)."""
    kept = []
    dropped = 0
    for rec in records:
        cal = calendars.get(rec.year)
        if cal is not None and cal.is_valid(rec.day_of_year):
            kept.append(rec)
        else:
            dropped += 1
    return kept, dropped


def write_rejects_csv(rejects: Iterable[Reject], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["input_file", "line_number", "reason"])
        for r in rejects:
            writer.writerow([r.input_file, r.line_number, r.reason])


# --- staged dataset files -------------------------------------------------
#
# The staging directory holds the cleaned dataset between the ingest and
# run steps: stations.csv, matrix_<year>.csv (wide, empty cell = missing),
# short_counts.csv, rejects.csv. Floats are written with repr so the round
# trip is exact.

STAGED_STATIONS = "stations.csv"
STAGED_SHORT = "short_counts.csv"
STAGED_REJECTS = "rejects.csv"


@dataclass
class StagedDataset:
    stations: list[StationRecord]
    matrices: dict[int, DailyCountMatrix]
    short_records: list[ShortCountRecord]

    @property
    def continuous_stations(self) -> list[StationRecord]:
        return [s for s in self.stations if s.kind is StationKind.CONTINUOUS]


def write_staged(dataset: StagedDataset, rejects: list[Reject], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stations = sorted(dataset.stations, key=lambda s: (s.station_id, s.year))
    with open(out / STAGED_STATIONS, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "year", "latitude", "longitude",
                         "functional_class", "lanes", "area_type", "kind"])
        for s in stations:
            writer.writerow([s.station_id, s.year, repr(float(s.latitude)), repr(float(s.longitude)),
                             s.functional_class, int(s.lanes), s.area_type, s.kind.value])
    for year, matrix in sorted(dataset.matrices.items()):
        with open(out / f"matrix_{year}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["station_id"] + [f"d{d:03d}" for d in range(1, DAYS_PER_YEAR + 1)])
            order = np.argsort(matrix.station_ids)
            for i in order:
                sid = matrix.station_ids[i]
                cells = [
                    repr(float(matrix.values[i, d])) if matrix.mask[i, d] else ""
                    for d in range(DAYS_PER_YEAR)
                ]
                writer.writerow([sid] + cells)
    shorts = sorted(dataset.short_records, key=lambda r: (r.station_id, r.year, r.day_of_year))
    with open(out / STAGED_SHORT, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "year", "day_of_year", "observed_count", "aadt",
                         "latitude", "longitude", "functional_class", "lanes", "area_type"])
        for r in shorts:
            writer.writerow([r.station_id, r.year, r.day_of_year, repr(float(r.observed_count)),
                             repr(float(r.aadt)), repr(float(r.latitude)), repr(float(r.longitude)),
                             r.functional_class, int(r.lanes), r.area_type])
    write_rejects_csv(rejects, out / STAGED_REJECTS)


def read_staged(stage_dir: str | Path) -> StagedDataset:
    stage = Path(stage_dir)
    stations_path = stage / STAGED_STATIONS
    if not stations_path.exists():
        raise SchemaError(f"no staged dataset found at {stage}")
    stations: list[StationRecord] = []
    with open(stations_path, newline="") as fh:
        for row in csv.DictReader(fh):
            stations.append(
                StationRecord(
                    station_id=row["station_id"],
                    year=int(row["year"]),
                    latitude=float(row["latitude"]),
                    longitude=float(row["longitude"]),
                    functional_class=row["functional_class"],
                    lanes=int(row["lanes"]),
                    area_type=row["area_type"],
                    kind=StationKind(row["kind"]),
                )
            )
    matrices: dict[int, DailyCountMatrix] = {}
    for path in sorted(stage.glob("matrix_*.csv")):
        year = int(path.stem.split("_")[1])
        ids: list[str] = []
        values_rows: list[np.ndarray] = []
        mask_rows: list[np.ndarray] = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                ids.append(row[0])
                cells = row[1:]
                mask_rows.append(np.array([c != "" for c in cells]))
                values_rows.append(np.array([float(c) if c != "" else 0.0 for c in cells]))
        matrices[year] = DailyCountMatrix(
            year, ids,
            np.vstack(values_rows) if ids else np.zeros((0, DAYS_PER_YEAR)),
            np.vstack(mask_rows) if ids else np.zeros((0, DAYS_PER_YEAR), dtype=bool),
        )
    short_records: list[ShortCountRecord] = []
    short_path = stage / STAGED_SHORT
    if short_path.exists():
        with open(short_path, newline="") as fh:
            for row in csv.DictReader(fh):
                short_records.append(
                    ShortCountRecord(
                        station_id=row["station_id"],
                        year=int(row["year"]),
                        day_of_year=int(row["day_of_year"]),
                        observed_count=float(row["observed_count"]),
                        aadt=float(row["aadt"]),
                        latitude=float(row["latitude"]),
                        longitude=float(row["longitude"]),
                        functional_class=row["functional_class"],
                        lanes=int(row["lanes"]),
                        area_type=row["area_type"],
                    )
                )
    return StagedDataset(stations=stations, matrices=matrices, short_records=short_records)
