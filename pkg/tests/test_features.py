import numpy as np
import pytest

from countday.core import (
    DAYS_PER_YEAR,
    DailyCountMatrix,
    ShortCountRecord,
    StationKind,
    StationRecord,
    build_valid_day_calendar,
    make_station_id,
)
from countday.features import (
    AllValidDays,
    DaySpecific,
    GroupKey,
    GroupPool,
    build_feature_rows,
    build_group_pools,
    cluster_stations,
    combine_functional_class,
    group_area_type,
    group_key_for,
    kmeans,
    loo_all_valid_days_average,
    loo_day_specific_average,
    standardize,
)


def make_station(lat, lon, fclass="minor arterial", lanes=2, area="urban",
                 kind=StationKind.CONTINUOUS, year=2022):
    return StationRecord.build(lat, lon, fclass, lanes, area, kind, year)


def make_matrix(year, station_values):
    """station_values: {station_id: {day: count}}"""
    ids = list(station_values)
    values = np.zeros((len(ids), DAYS_PER_YEAR))
    mask = np.zeros((len(ids), DAYS_PER_YEAR), dtype=bool)
    for i, sid in enumerate(ids):
        for day, count in station_values[sid].items():
            values[i, day - 1] = count
            mask[i, day - 1] = True
    return DailyCountMatrix(year, ids, values, mask)


class TestGrouping:
    def test_class_mapping(self):
        assert combine_functional_class("minor arterial") == "Arterial"
        assert combine_functional_class("interstate") == "Arterial"
        assert combine_functional_class("other freeway") == "Arterial"
        assert combine_functional_class("other principal arterial") == "Arterial"
        assert combine_functional_class("major collector") == "Collector"
        assert combine_functional_class("minor collector") == "Collector"
        assert combine_functional_class("local") == "Collector"

    def test_unknown_class_rejected(self):
        with pytest.raises(ValueError):
            combine_functional_class("ramp")

    def test_area_mapping(self):
        assert group_area_type("rural") == "Rural"
        assert group_area_type("small urban") == "Urban"
        assert group_area_type("urban") == "Urban"
        assert group_area_type("large urban") == "Urban"

    def test_unknown_area_rejected(self):
        with pytest.raises(ValueError):
            group_area_type("")

    def test_group_key(self):
        s = make_station(30.0, -97.0, "local", area="small urban", year=2023)
        assert group_key_for(s) == GroupKey(2023, "Collector", "Urban")


class TestLooDaySpecific:
    def test_mean_of_others(self):
        pool = GroupPool(GroupKey(2022, "Arterial", "Urban"))
        pool.add("A", 50, 100.0)
        pool.add("B", 50, 200.0)
        pool.add("C", 50, 300.0)
        assert loo_day_specific_average(pool, "A", 50) == 250.0

    def test_empty_pool_unavailable(self):
        pool = GroupPool(GroupKey(2022, "Arterial", "Urban"))
        pool.add("A", 50, 100.0)
        assert loo_day_specific_average(pool, "A", 50) is None
        assert loo_day_specific_average(pool, "A", 51) is None

    def test_against_brute_force(self):
        rng = np.random.default_rng(0)
        pool = GroupPool(GroupKey(2022, "Arterial", "Urban"))
        raw = []
        for sid in "ABCDE":
            for day in rng.choice(np.arange(1, 366), size=30, replace=False):
                count = float(rng.uniform(0, 5000))
                pool.add(sid, int(day), count)
                raw.append((sid, int(day), count))
        for target in "ABCDE":
            for day in range(1, 366):
                others = [c for sid, d, c in raw if sid != target and d == day]
                expected = sum(others) / len(others) if others else None
                assert loo_day_specific_average(pool, target, day) == expected

    def test_day_out_of_range(self):
        pool = GroupPool(GroupKey(2022, "Arterial", "Urban"))
        with pytest.raises(ValueError):
            loo_day_specific_average(pool, "A", 0)


class TestLooAllValidDays:
    def test_flat_mean_over_station_days(self):
        cal = build_valid_day_calendar(2022)
        days = cal.valid_days()[:2]
        pool = GroupPool(GroupKey(2022, "Arterial", "Urban"))
        pool.add("T", days[0], 999.0)
        for count, day in zip([10.0, 20.0], days):
            pool.add("B", day, count)
        for count, day in zip([30.0, 40.0], days):
            pool.add("C", day, count)
        assert loo_all_valid_days_average(pool, "T", cal) == 25.0

    def test_invalid_days_excluded(self):
        cal = build_valid_day_calendar(2022)
        pool = GroupPool(GroupKey(2022, "Arterial", "Urban"))
        pool.add("B", 1, 1000.0)  # Saturday: never counted
        pool.add("B", 186, 50.0)
        assert loo_all_valid_days_average(pool, "T", cal) == 50.0

    def test_empty_pool_unavailable(self):
        cal = build_valid_day_calendar(2022)
        pool = GroupPool(GroupKey(2022, "Arterial", "Urban"))
        assert loo_all_valid_days_average(pool, "T", cal) is None

    def test_against_brute_force_with_staggered_missingness(self):
        rng = np.random.default_rng(1)
        cal = build_valid_day_calendar(2022)
        pool = GroupPool(GroupKey(2022, "Arterial", "Urban"))
        raw = []
        for sid in "ABCD":
            n_days = int(rng.integers(5, 60))
            for day in rng.choice(np.arange(1, 366), size=n_days, replace=False):
                count = float(rng.uniform(0, 3000))
                pool.add(sid, int(day), count)
                raw.append((sid, int(day), count))
        for target in "ABCD":
            contributing = [c for sid, d, c in raw if sid != target and cal.is_valid(d)]
            expected = sum(contributing) / len(contributing)
            assert loo_all_valid_days_average(pool, target, cal) == expected


class TestLeakage:
    def test_deleting_target_counts_changes_nothing(self):
        rng = np.random.default_rng(2)
        full = GroupPool(GroupKey(2022, "Arterial", "Urban"))
        scrubbed = GroupPool(GroupKey(2022, "Arterial", "Urban"))
        for sid in "ABCDEF":
            for day in rng.choice(np.arange(1, 366), size=40, replace=False):
                count = float(rng.uniform(0, 1000))
                full.add(sid, int(day), count)
                if sid != "A":
                    scrubbed.add(sid, int(day), count)
        cal = build_valid_day_calendar(2022)
        for day in range(1, 366):
            assert loo_day_specific_average(full, "A", day) == \
                loo_day_specific_average(scrubbed, "A", day)
        assert loo_all_valid_days_average(full, "A", cal) == \
            loo_all_valid_days_average(scrubbed, "A", cal)


class TestStandardize:
    def test_known_column(self):
        z, mean, std = standardize(np.array([[1.0], [2.0], [3.0]]))
        np.testing.assert_allclose(z[:, 0], [-1.2247, 0.0, 1.2247], atol=1e-4)
        assert mean[0] == 2.0
        assert std[0] == pytest.approx(np.sqrt(2.0 / 3.0))

    def test_constant_column_maps_to_zero(self):
        z, _, std = standardize(np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]))
        assert np.all(z[:, 0] == 0.0)
        assert std[0] == 0.0

    def test_idempotent_on_zscores(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(50, 4))
        z1, _, _ = standardize(X)
        z2, _, _ = standardize(z1)
        np.testing.assert_allclose(z2, z1, atol=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            standardize(np.array([[1.0], [np.nan]]))


class TestKmeans:
    def test_separated_clouds_recovered(self):
        rng = np.random.default_rng(4)
        centers = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0], [100.0, 100.0]])
        rows = np.vstack([c + rng.normal(0, 1.0, size=(20, 2)) for c in centers])
        assignment = kmeans(rows, k=4, seed=0)
        labels = np.array([assignment.labels[(str(i), 0)] for i in range(80)])
        cloud_labels = [set(labels[i * 20:(i + 1) * 20]) for i in range(4)]
        assert all(len(s) == 1 for s in cloud_labels)
        assert len(set.union(*cloud_labels)) == 4

    def test_identical_rows_share_one_label(self):
        rows = np.ones((6, 3))
        assignment = kmeans(rows, k=4, seed=1)
        assert len(set(assignment.labels.values())) == 1

    def test_same_seed_identical(self):
        rng = np.random.default_rng(5)
        rows = rng.normal(size=(40, 3))
        a = kmeans(rows, k=4, seed=9)
        b = kmeans(rows, k=4, seed=9)
        assert a.labels == b.labels
        assert np.array_equal(a.centroids, b.centroids)

    def test_inertia_non_increasing(self):
        rng = np.random.default_rng(6)
        rows = rng.normal(size=(120, 4))
        assignment = kmeans(rows, k=4, seed=2)
        hist = assignment.inertia_history
        assert len(hist) >= 1
        assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))

    def test_fewer_rows_than_k_rejected(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((3, 2)), k=4, seed=0)

    def test_cluster_stations_covers_short_and_continuous(self):
        stations = [make_station(30.0 + i, -97.0, year=2022) for i in range(4)]
        short = ShortCountRecord(
            station_id=make_station_id(35.0, -99.0, "local"),
            observed_count=100.0, day_of_year=10, year=2023, aadt=120.0,
            latitude=35.0, longitude=-99.0, functional_class="local", lanes=1, area_type="rural",
        )
        assignment = cluster_stations([*stations, short], k=4, seed=0)
        assert len(assignment.labels) == 5
        assert short.key in assignment.labels


class TestBuildFeatureRows:
    def setup_group(self):
        stations = [
            make_station(30.0, -97.0),
            make_station(30.1, -97.1),
            make_station(30.2, -97.2),
        ]
        cal = build_valid_day_calendar(2022)
        days = cal.valid_days()[:3]
        per_station = {
            s.station_id: {d: 100.0 * (i + 1) + j for j, d in enumerate(days)}
            for i, s in enumerate(stations)
        }
        matrix = make_matrix(2022, per_station)
        pools = build_group_pools(stations, {2022: matrix})
        targets = {s.key: 1000.0 * (i + 1) for i, s in enumerate(stations)}
        return stations, pools, targets, {2022: cal}, days

    def test_all_valid_days_rows(self):
        stations, pools, targets, cals, _ = self.setup_group()
        rows = build_feature_rows(stations, pools, AllValidDays(), targets, cals)
        assert len(rows) == 3
        features = [r.loo_feature for r in rows]
        assert len(set(features)) == 3
        for row, station in zip(rows, stations):
            assert row.target_log == pytest.approx(np.log1p(targets[station.key]))

    def test_day_specific_delegates(self):
        stations, pools, targets, cals, days = self.setup_group()
        day = days[0]
        rows = build_feature_rows(stations, pools, DaySpecific(day), targets, cals)
        for row, station in zip(rows, stations):
            expected = loo_day_specific_average(
                pools[group_key_for(station)], station.station_id, day
            )
            assert row.loo_feature == expected

    def test_single_station_group_unavailable(self):
        station = make_station(40.0, -100.0, "local", area="rural")
        cal = build_valid_day_calendar(2022)
        day = cal.valid_days()[0]
        matrix = make_matrix(2022, {station.station_id: {day: 123.0}})
        pools = build_group_pools([station], {2022: matrix})
        rows = build_feature_rows(
            [station], pools, DaySpecific(day), {station.key: 500.0}, {2022: cal}
        )
        assert rows[0].loo_feature is None
        assert not rows[0].available

    def test_invalid_day_rejected_unless_allowed(self):
        stations, pools, targets, cals, _ = self.setup_group()
        with pytest.raises(ValueError):
            build_feature_rows(stations, pools, DaySpecific(1), targets, cals)
        rows = build_feature_rows(
            stations, pools, DaySpecific(1), targets, cals, allow_invalid_day=True
        )
        assert all(r.loo_feature is None for r in rows)
