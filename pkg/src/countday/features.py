"""Attribute grouping, clustering, and leave-one-out traffic features.

Stations are grouped by (year, combined functional class, rural/urban).
Within a group, two context features are computed for a target station,
always excluding the station's own counts:

* the mean count of other group stations on one specific day, and
* the flat mean over all (other station, valid day) observations.

Short-count observations join these pools; model targets come only from
continuous stations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DailyCountMatrix, ShortCountRecord, StationRecord, ValidDayCalendar

_ARTERIAL = ("interstate", "other freeway", "other principal arterial", "minor arterial")
_COLLECTOR = ("major collector", "minor collector", "local")
_URBAN = ("small urban", "urban", "large urban")

CLASS_CODES = {"Arterial": 0, "Collector": 1}
AREA_CODES = {"Rural": 0, "Urban": 1}

CLUSTER_FEATURES = ("year", "latitude", "longitude", "combined_class", "lanes", "area_group")
MODEL_FEATURES = CLUSTER_FEATURES + ("loo_feature",)


def combine_functional_class(raw: str) -> str:
    """Collapse the seven raw functional classes to Arterial or Collector."""
    if raw in _ARTERIAL:
        return "Arterial"
    if raw in _COLLECTOR:
        return "Collector"
    raise ValueError(f"unknown functional class: {raw!r}")


def group_area_type(raw: str) -> str:
    """Collapse the four raw area types to Rural or Urban."""
    if raw == "rural":
        return "Rural"
    if raw in _URBAN:
        return "Urban"
    raise ValueError(f"unknown area type: {raw!r}")


@dataclass(frozen=True)
class GroupKey:
    """Similarity group: same year, combined class, and rural/urban."""

    year: int
    combined_class: str
    area_group: str


def group_key_for(record: StationRecord | ShortCountRecord) -> GroupKey:
    return GroupKey(
        year=record.year,
        combined_class=combine_functional_class(record.functional_class),
        area_group=group_area_type(record.area_type),
    )


@dataclass(frozen=True)
class Observation:
    """One observed daily count contributed to a group pool."""

    station_id: str
    day: int
    count: float


@dataclass
class GroupPool:
    """All observed counts of one group, indexed for leave-one-out queries."""

    key: GroupKey
    observations: list[Observation] = field(default_factory=list)
    _by_day: dict[int, list[Observation]] = field(default_factory=dict, repr=False)

    def add(self, station_id: str, day: int, count: float) -> None:
        obs = Observation(station_id, day, count)
        self.observations.append(obs)
        self._by_day.setdefault(day, []).append(obs)

    def on_day(self, day: int) -> list[Observation]:
        return self._by_day.get(day, [])


def build_group_pools(
    stations: list[StationRecord],
    matrices: dict[int, DailyCountMatrix],
    short_records: list[ShortCountRecord] = (),
) -> dict[GroupKey, GroupPool]:
    """Pool every observed count by group.

    Continuous stations contribute each observed matrix cell; short-count
    records contribute their single observation. Pools keep insertion
    order, so leave-one-out queries are reproducible.
    """
    pools: dict[GroupKey, GroupPool] = {}
    for station in stations:
        matrix = matrices.get(station.year)
        if matrix is None or station.station_id not in matrix.station_ids:
            continue
        key = group_key_for(station)
        pool = pools.setdefault(key, GroupPool(key))
        i = matrix.row(station.station_id)
        for day in np.nonzero(matrix.mask[i])[0]:
            pool.add(station.station_id, int(day) + 1, float(matrix.values[i, day]))
    for rec in short_records:
        key = group_key_for(rec)
        pool = pools.setdefault(key, GroupPool(key))
        pool.add(rec.station_id, rec.day_of_year, rec.observed_count)
    return pools


def loo_day_specific_average(
    pool: GroupPool, target_station_id: str, day: int
) -> float | None:
    """Mean count on one day across the group's other stations.

    Returns None when no other station observed that day; 'unavailable'
    is a value here, not an error.
    """
    if not 1 <= day <= 365:
        raise ValueError(f"day out of range: {day}")
    counts = [o.count for o in pool.on_day(day) if o.station_id != target_station_id]
    if not counts:
        return None
    return sum(counts) / len(counts)


def loo_all_valid_days_average(
    pool: GroupPool, target_station_id: str, calendar: ValidDayCalendar
) -> float | None:
    """Flat mean over every (other station, valid day) observation in the group."""
    counts = [
        o.count
        for o in pool.observations
        if o.station_id != target_station_id and calendar.is_valid(o.day)
    ]
    if not counts:
        return None
    return sum(counts) / len(counts)


def standardize(columns: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Z-score each column with the population std; constant columns map to zeros.

    Returns (standardized matrix, means, stds) so the transform can be
    reused on new rows.
    """
    X = np.asarray(columns, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input to standardize")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    safe = np.where(std > 0, std, 1.0)
    z = (X - mean) / safe
    z[:, std == 0] = 0.0
    return z, mean, std


@dataclass
class ClusterAssignment:
    """K-means result: one label per station-year plus the centroids."""

    labels: dict[tuple[str, int], int]
    centroids: np.ndarray
    k: int
    inertia_history: tuple[float, ...] = ()

    def label(self, key: tuple[str, int]) -> int:
        return self.labels[key]


def _plusplus_init(rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = rows.shape[0]
    centroids = np.empty((k, rows.shape[1]), dtype=float)
    centroids[0] = rows[rng.integers(n)]
    d2 = np.sum((rows - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total == 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = rows[idx]
        d2 = np.minimum(d2, np.sum((rows - centroids[i]) ** 2, axis=1))
    return centroids


def kmeans(
    rows: np.ndarray,
    k: int = 4,
    seed: int = 0,
    keys: list[tuple[str, int]] | None = None,
    max_iter: int = 300,
) -> ClusterAssignment:
    """Lloyd's algorithm with k-means++ seeding, deterministic given the seed.

    Runs until the assignment reaches a fixpoint or max_iter passes. An
    empty cluster is re-seeded at the point farthest from its assigned
    centroid. ``keys`` labels the rows; row indices are used when omitted.
    """
    X = np.asarray(rows, dtype=float)
    n = X.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} rows, got {n}")
    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(X, k, rng)
    labels = None
    inertia_path: list[float] = []
    for _ in range(max_iter):
        d2 = np.sum((X[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)  # ties resolve to the lowest label
        inertia_path.append(float(d2[np.arange(n), new_labels].sum()))
        for c in range(k):
            members = new_labels == c
            if members.any():
                centroids[c] = X[members].mean(axis=0)
            else:
                # re-seed at the point farthest from its assigned centroid
                dist_own = d2[np.arange(n), new_labels]
                centroids[c] = X[int(np.argmax(dist_own))]
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
    if keys is None:
        keys = [(str(i), 0) for i in range(n)]
    label_map = {key: int(lbl) for key, lbl in zip(keys, labels)}
    return ClusterAssignment(
        labels=label_map, centroids=centroids, k=k, inertia_history=tuple(inertia_path)
    )


def station_feature_matrix(
    records: list[StationRecord | ShortCountRecord],
) -> np.ndarray:
    """Clustering inputs: [year, latitude, longitude, class code, lanes, area code]."""
    rows = np.empty((len(records), len(CLUSTER_FEATURES)), dtype=float)
    for i, r in enumerate(records):
        rows[i] = (
            r.year,
            r.latitude,
            r.longitude,
            CLASS_CODES[combine_functional_class(r.functional_class)],
            r.lanes,
            AREA_CODES[group_area_type(r.area_type)],
        )
    return rows


def cluster_stations(
    records: list[StationRecord | ShortCountRecord], k: int = 4, seed: int = 0
) -> ClusterAssignment:
    """Cluster the combined continuous + short station set on standardized attributes."""
    rows, _, _ = standardize(station_feature_matrix(records))
    return kmeans(rows, k=k, seed=seed, keys=[r.key for r in records])


@dataclass(frozen=True)
class DaySpecific:
    """Scenario feature: group average on one candidate day."""

    day: int


@dataclass(frozen=True)
class AllValidDays:
    """Scenario feature: group average over all valid days."""


Scenario = DaySpecific | AllValidDays


@dataclass
class FeatureRow:
    """One model-ready row for a continuous station-year."""

    key: tuple[str, int]
    year: int
    latitude: float
    longitude: float
    combined_class: int
    lanes: int
    area_group: int
    loo_feature: float | None
    target_log: float | None

    @property
    def available(self) -> bool:
        return self.loo_feature is not None

    def vector(self) -> np.ndarray:
        if self.loo_feature is None:
            raise ValueError(f"row {self.key} has no usable context feature")
        return np.array(
            [
                self.year,
                self.latitude,
                self.longitude,
                self.combined_class,
                self.lanes,
                self.area_group,
                self.loo_feature,
            ],
            dtype=float,
        )


def build_feature_rows(
    stations: list[StationRecord],
    pools: dict[GroupKey, GroupPool],
    scenario: Scenario,
    targets: dict[tuple[str, int], float],
    calendars: dict[int, ValidDayCalendar],
    allow_invalid_day: bool = False,
) -> list[FeatureRow]:
    """One row per continuous station-year with the scenario's context feature.

    A DaySpecific day that is calendar-invalid in a station's year raises,
    unless allow_invalid_day is set (the sweep passes it to probe every
    candidate day). Rows whose pools have no other observation carry
    loo_feature=None and are dropped by the modeling stage, which counts
    them.
    """
    rows: list[FeatureRow] = []
    for station in stations:
        if isinstance(scenario, DaySpecific) and not allow_invalid_day:
            if not calendars[station.year].is_valid(scenario.day):
                raise ValueError(
                    f"day {scenario.day} is not a valid collection day in {station.year}"
                )
        pool = pools.get(group_key_for(station))
        if pool is None:
            loo = None
        elif isinstance(scenario, DaySpecific):
            loo = loo_day_specific_average(pool, station.station_id, scenario.day)
        else:
            loo = loo_all_valid_days_average(pool, station.station_id, calendars[station.year])
        aadt = targets.get(station.key)
        rows.append(
            FeatureRow(
                key=station.key,
                year=station.year,
                latitude=station.latitude,
                longitude=station.longitude,
                combined_class=CLASS_CODES[combine_functional_class(station.functional_class)],
                lanes=station.lanes,
                area_group=AREA_CODES[group_area_type(station.area_type)],
                loo_feature=loo,
                target_log=None if aadt is None else float(np.log1p(aadt)),
            )
        )
    return rows


def write_feature_rows_csv(
    rows: list[FeatureRow], clusters: ClusterAssignment | None, path
) -> None:
    """Audit export: station, cluster, features, and the log target."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["station_id", "year", "cluster", "latitude", "longitude",
             "combined_class", "lanes", "area_group", "loo_feature", "target_log"]
        )
        for row in rows:
            cluster = "" if clusters is None else clusters.labels.get(row.key, "")
            writer.writerow(
                [
                    row.key[0], row.year, cluster,
                    repr(float(row.latitude)), repr(float(row.longitude)),
                    row.combined_class, row.lanes, row.area_group,
                    "" if row.loo_feature is None else repr(float(row.loo_feature)),
                    "" if row.target_log is None else repr(float(row.target_log)),
                ]
            )
