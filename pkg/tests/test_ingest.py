import datetime as dt

import numpy as np
import pytest

from countday.core import (
    DailyCountMatrix,
    ShortCountRecord,
    StationKind,
    StationRecord,
    build_valid_day_calendar,
    make_station_id,
)
from countday.ingest import (
    LongCountRow,
    SchemaError,
    ShortCountObservation,
    StagedDataset,
    aggregate_hourly_to_daily,
    apply_attribute_overrides,
    filter_short_records,
    filter_to_valid_days,
    merge_short_counts,
    parse_count_file,
    pivot_to_wide,
    read_staged,
    unpivot,
    write_staged,
)

SID = make_station_id(30.0, -97.0, "interstate")
SID2 = make_station_id(31.0, -98.0, "local")


def continuous_header():
    return "station_id,latitude,longitude,functional_class,lanes,area_type,date,hour,volume\n"


def continuous_line(sid=SID, lat=30.0, lon=-97.0, fclass="interstate", lanes=4,
                    area="urban", date="2022-03-01", hour="", volume="120"):
    return f"{sid},{lat},{lon},{fclass},{lanes},{area},{date},{hour},{volume}\n"


def short_header():
    return "station_id,latitude,longitude,functional_class,lanes,area_type,date,volume_24h,aadt\n"


class TestParseContinuous:
    def test_well_formed_rows(self, tmp_path):
        path = tmp_path / "cont.csv"
        path.write_text(
            continuous_header()
            + continuous_line(date="2022-03-01")
            + continuous_line(date="2022-03-02")
            + continuous_line(date="2022-03-03")
        )
        result = parse_count_file(path, "continuous")
        assert len(result.rows) == 3
        assert not result.rejects
        assert len(result.stations) == 1
        assert result.stations[0].kind is StationKind.CONTINUOUS

    def test_negative_volume_rejected_with_reason(self, tmp_path):
        path = tmp_path / "cont.csv"
        path.write_text(
            continuous_header()
            + continuous_line(date="2022-03-01")
            + continuous_line(date="2022-03-02", volume="-5")
            + continuous_line(date="2022-03-03")
        )
        result = parse_count_file(path, "continuous")
        assert len(result.rows) == 2
        assert len(result.rejects) == 1
        assert "negative volume" in result.rejects[0].reason
        assert result.rejects[0].line_number == 3

    def test_missing_column_is_schema_error(self, tmp_path):
        path = tmp_path / "cont.csv"
        path.write_text("station_id,latitude,longitude,lanes,area_type,date,volume\n")
        with pytest.raises(SchemaError, match="functional_class"):
            parse_count_file(path, "continuous")

    def test_leap_year_date_rejected(self, tmp_path):
        path = tmp_path / "cont.csv"
        path.write_text(continuous_header() + continuous_line(date="2024-03-01"))
        result = parse_count_file(path, "continuous")
        assert not result.rows
        assert "leap-year" in result.rejects[0].reason

    def test_out_of_bounds_coordinates_rejected(self, tmp_path):
        sid = make_station_id(50.0, -97.0, "interstate")
        path = tmp_path / "cont.csv"
        path.write_text(continuous_header() + continuous_line(sid=sid, lat=50.0))
        result = parse_count_file(path, "continuous")
        assert "outside study bounds" in result.rejects[0].reason

    def test_station_id_mismatch_rejected(self, tmp_path):
        path = tmp_path / "cont.csv"
        path.write_text(continuous_header() + continuous_line(sid="bogus"))
        result = parse_count_file(path, "continuous")
        assert "does not match" in result.rejects[0].reason

    def test_unknown_schema(self, tmp_path):
        with pytest.raises(ValueError, match="unknown schema"):
            parse_count_file(tmp_path / "x.csv", "weekly")


class TestParseShort:
    def test_pass_through_fields(self, tmp_path):
        path = tmp_path / "short.csv"
        date = "2022-02-14"  # day 45
        path.write_text(
            short_header()
            + f"{SID2},31.0,-98.0,local,2,rural,{date},1200,1350\n"
        )
        result = parse_count_file(path, "short")
        rec = result.short_records[0]
        assert rec.observed_count == 1200.0
        assert rec.day_of_year == 45
        assert rec.aadt == 1350.0
        assert result.stations[0].kind is StationKind.SHORT

    def test_nonpositive_aadt_rejected(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text(
            short_header() + f"{SID2},31.0,-98.0,local,2,rural,2022-02-14,1200,0\n"
        )
        result = parse_count_file(path, "short")
        assert not result.short_records
        assert "aadt" in result.rejects[0].reason


class TestParseAttributes:
    def test_overrides_applied(self, tmp_path):
        path = tmp_path / "attrs.csv"
        path.write_text(f"station_id,lanes,area_type\n{SID},6,large urban\n")
        result = parse_count_file(path, "attributes")
        assert result.attributes[SID] == (6, "large urban")
        station = StationRecord(SID, 30.0, -97.0, "interstate", 4, "urban",
                                StationKind.CONTINUOUS, 2022)
        stations, records = apply_attribute_overrides([station], [], result.attributes)
        assert stations[0].lanes == 6
        assert stations[0].area_type == "large urban"

    def test_duplicate_station_rejected(self, tmp_path):
        path = tmp_path / "attrs.csv"
        path.write_text(f"station_id,lanes,area_type\n{SID},6,urban\n{SID},4,rural\n")
        result = parse_count_file(path, "attributes")
        assert len(result.attributes) == 1
        assert "duplicate" in result.rejects[0].reason


class TestAggregate:
    def test_24_hourly_rows_sum(self):
        date = dt.date(2022, 3, 1)
        rows = [LongCountRow("s", date, h, 10.0) for h in range(24)]
        daily, incomplete = aggregate_hourly_to_daily(rows)
        assert len(daily) == 1
        assert daily[0].volume == 240.0
        assert daily[0].hour is None
        assert not incomplete

    def test_23_hours_marked_missing(self):
        date = dt.date(2022, 3, 1)
        rows = [LongCountRow("s", date, h, 10.0) for h in range(23)]
        daily, incomplete = aggregate_hourly_to_daily(rows)
        assert not daily
        assert incomplete == [("s", date, 23)]

    def test_two_stations(self):
        date = dt.date(2022, 3, 1)
        rows = [LongCountRow(s, date, h, 1.0) for s in ("a", "b") for h in range(24)]
        daily, _ = aggregate_hourly_to_daily(rows)
        assert len(daily) == 2

    def test_mixed_hourly_and_daily_errors(self):
        date = dt.date(2022, 3, 1)
        rows = [LongCountRow("s", date, None, 100.0), LongCountRow("s", date, 5, 10.0)]
        with pytest.raises(ValueError, match="mixed"):
            aggregate_hourly_to_daily(rows)

    def test_daily_rows_pass_through(self):
        date = dt.date(2022, 3, 1)
        daily, _ = aggregate_hourly_to_daily([LongCountRow("s", date, None, 77.0)])
        assert daily[0].volume == 77.0


class TestPivot:
    def test_mask_reflects_presence(self):
        rows = [
            LongCountRow("s", dt.date(2022, 1, 1), None, 5.0),
            LongCountRow("s", dt.date(2022, 1, 3), None, 7.0),
        ]
        matrix = pivot_to_wide(rows, 2022)
        assert matrix.mask[0, 0] and matrix.mask[0, 2]
        assert matrix.mask.sum() == 2
        assert matrix.values[0, 2] == 7.0

    def test_empty_input(self):
        matrix = pivot_to_wide([], 2022)
        assert matrix.n_stations == 0

    def test_duplicate_station_day_errors(self):
        rows = [
            LongCountRow("s", dt.date(2022, 1, 1), None, 5.0),
            LongCountRow("s", dt.date(2022, 1, 1), None, 6.0),
        ]
        with pytest.raises(ValueError, match="duplicate"):
            pivot_to_wide(rows, 2022)

    def test_wrong_year_errors(self):
        rows = [LongCountRow("s", dt.date(2023, 1, 1), None, 5.0)]
        with pytest.raises(ValueError):
            pivot_to_wide(rows, 2022)

    def test_dense_block(self):
        rows = [
            LongCountRow(f"s{i:03d}", dt.date(2022, 1, 1) + dt.timedelta(days=d), None, float(i + d))
            for i in range(20)
            for d in range(365)
        ]
        matrix = pivot_to_wide(rows, 2022)
        assert matrix.n_stations == 20
        assert matrix.mask.all()

    def test_round_trip_is_lossless(self):
        rng = np.random.default_rng(0)
        rows = []
        for i in range(5):
            days = rng.choice(np.arange(365), size=40, replace=False)
            for d in days:
                rows.append(
                    LongCountRow(f"s{i}", dt.date(2022, 1, 1) + dt.timedelta(days=int(d)),
                                 None, float(rng.uniform(0, 100)))
                )
        matrix = pivot_to_wide(rows, 2022)
        back = unpivot(matrix)
        assert sorted(back, key=lambda r: (r.station_id, r.date)) == \
            sorted(rows, key=lambda r: (r.station_id, r.date))


class TestMerge:
    def obs(self, sid, count=100.0, day=10):
        return ShortCountObservation(
            station_id=sid, observed_count=count, day_of_year=day, year=2022,
            latitude=30.0, longitude=-97.0, functional_class="local", lanes=2,
            area_type="rural",
        )

    def test_inner_join_semantics(self):
        counts = [self.obs("a"), self.obs("b"), self.obs("c")]
        merged, report = merge_short_counts(counts, [("a", 500.0), ("b", 700.0)])
        assert [m.station_id for m in merged] == ["a", "b"]
        assert report.merged == 2
        assert report.dropped_unmatched == 1

    def test_disjoint_keys(self):
        counts = [self.obs("a"), self.obs("b")]
        merged, report = merge_short_counts(counts, [("z", 100.0)])
        assert not merged
        assert report.dropped_unmatched == 2

    def test_zero_aadt_dropped_as_invalid(self):
        merged, report = merge_short_counts([self.obs("a")], [("a", 0.0)])
        assert not merged
        assert report.dropped_invalid == 1

    def test_duplicate_aadt_keys_error(self):
        with pytest.raises(ValueError, match="duplicate"):
            merge_short_counts([self.obs("a")], [("a", 1.0), ("a", 2.0)])

    def test_merged_never_exceeds_either_side(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            count_ids = [f"s{i}" for i in rng.choice(30, size=rng.integers(1, 15), replace=False)]
            table_ids = [f"s{i}" for i in rng.choice(30, size=rng.integers(1, 15), replace=False)]
            counts = [self.obs(s) for s in count_ids]
            table = [(s, 100.0) for s in table_ids]
            merged, _ = merge_short_counts(counts, table)
            assert len(merged) <= min(len(counts), len(table))
            assert all(m.station_id in set(count_ids) & set(table_ids) for m in merged)


class TestValidDayFilter:
    def test_masks_invalid_days(self):
        cal = build_valid_day_calendar(2022)
        values = np.ones((1, 365))
        mask = np.ones((1, 365), dtype=bool)
        matrix = DailyCountMatrix(2022, ["s"], values, mask)
        filtered = filter_to_valid_days(matrix, cal)
        assert filtered.mask.sum() == sum(cal.valid)
        assert set(np.nonzero(filtered.mask[0])[0] + 1) == set(cal.valid_days())

    def test_all_missing_unchanged(self):
        cal = build_valid_day_calendar(2022)
        matrix = DailyCountMatrix(2022, ["s"], np.zeros((1, 365)), np.zeros((1, 365), dtype=bool))
        assert filter_to_valid_days(matrix, cal).mask.sum() == 0

    def test_holiday_only_station_becomes_all_missing(self):
        cal = build_valid_day_calendar(2022)
        values = np.zeros((1, 365))
        mask = np.zeros((1, 365), dtype=bool)
        values[0, 184] = 100.0  # day 185 = 2022-07-04
        mask[0, 184] = True
        matrix = DailyCountMatrix(2022, ["s"], values, mask)
        assert filter_to_valid_days(matrix, cal).mask.sum() == 0

    def test_year_mismatch_errors(self):
        cal = build_valid_day_calendar(2023)
        matrix = DailyCountMatrix(2022, ["s"], np.zeros((1, 365)), np.zeros((1, 365), dtype=bool))
        with pytest.raises(ValueError):
            filter_to_valid_days(matrix, cal)

    def test_filtered_mask_subset_of_calendar(self):
        rng = np.random.default_rng(2)
        cal = build_valid_day_calendar(2022)
        mask = rng.random((4, 365)) < 0.5
        matrix = DailyCountMatrix(2022, list("abcd"), np.ones((4, 365)), mask)
        filtered = filter_to_valid_days(matrix, cal)
        assert not np.any(filtered.mask & ~cal.mask_array()[None, :])

    def test_short_record_filter(self):
        cal22 = build_valid_day_calendar(2022)
        recs = []
        for day in (1, 186):  # Saturday vs valid Tuesday
            recs.append(
                ShortCountRecord(
                    station_id="x", observed_count=10.0, day_of_year=day, year=2022,
                    aadt=100.0, latitude=30.0, longitude=-97.0,
                    functional_class="local", lanes=1, area_type="rural",
                )
            )
        kept, dropped = filter_short_records(recs, {2022: cal22})
        assert len(kept) == 1 and kept[0].day_of_year == 186
        assert dropped == 1


class TestStagedRoundTrip:
    def test_write_read_identity(self, tmp_path):
        rng = np.random.default_rng(3)
        stations = [
            StationRecord(SID, 30.0, -97.0, "interstate", 4, "urban",
                          StationKind.CONTINUOUS, 2022),
            StationRecord(SID2, 31.0, -98.0, "local", 2, "rural", StationKind.SHORT, 2022),
        ]
        values = rng.uniform(0, 1000, size=(1, 365))
        mask = rng.random((1, 365)) < 0.8
        matrix = DailyCountMatrix(2022, [SID], values, mask)
        rec = ShortCountRecord(
            station_id=SID2, observed_count=123.456, day_of_year=45, year=2022, aadt=150.5,
            latitude=31.0, longitude=-98.0, functional_class="local", lanes=2, area_type="rural",
        )
        dataset = StagedDataset(stations=stations, matrices={2022: matrix}, short_records=[rec])
        write_staged(dataset, [], tmp_path)
        loaded = read_staged(tmp_path)
        assert loaded.stations == stations
        assert loaded.short_records == [rec]
        m = loaded.matrices[2022]
        assert m.station_ids == [SID]
        assert np.array_equal(m.mask, mask)
        assert np.array_equal(m.values[m.mask], values[mask])

    def test_missing_stage_raises_schema_error(self, tmp_path):
        with pytest.raises(SchemaError):
            read_staged(tmp_path / "nope")
