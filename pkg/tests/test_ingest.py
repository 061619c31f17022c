import io
from datetime import date, datetime

import pytest
from hypothesis import given, strategies as st

from bikebalance.errors import ConfigError
from bikebalance.ingest import (
    DROPOFF,
    PICKUP,
    WEEKDAY,
    WEEKEND,
    EventTable,
    clean_trips,
    days_in_quarter,
    events_from_trip,
    filter_low_activity_stations,
    load_stations,
    parse_trips,
    partition_events,
    quarter_of,
    write_trips,
)

from conftest import TRIP_HEADER, ev, make_trip, trips_csv


class TestParse:
    def test_single_row_maps_fields(self):
        data = trips_csv(["301,2015-07-01 08:30:00,2015-07-01 08:35:01,31000,31001,W20001,Member"])
        result = parse_trips(io.BytesIO(data))
        assert len(result.trips) == 1
        assert result.diagnostics == []
        t = result.trips[0]
        assert t.duration == 301
        assert t.start_time == datetime(2015, 7, 1, 8, 30, 0)
        assert t.end_time == datetime(2015, 7, 1, 8, 35, 1)
        assert t.start_station == "31000"
        assert t.end_station == "31001"
        assert t.bike_id == "W20001"
        assert t.member_type == "member"

    def test_header_only_is_empty(self):
        result = parse_trips(io.BytesIO(trips_csv([])))
        assert result.trips == []
        assert result.diagnostics == []
        assert result.row_count == 0

    def test_end_before_start_excluded_with_diagnostic(self):
        data = trips_csv(["301,2015-07-01 08:30:00,2015-07-01 08:20:00,31000,31001,W1,Member"])
        result = parse_trips(io.BytesIO(data))
        assert result.trips == []
        (diag,) = result.diagnostics
        assert diag.row == 2
        assert diag.excluded
        assert "end_time" in diag.message

    def test_missing_mapped_column_is_fatal(self):
        data = b"Duration,Start date\n301,2015-07-01 08:30:00\n"
        with pytest.raises(ConfigError, match="End date"):
            parse_trips(io.BytesIO(data))

    def test_unparseable_rows_reported_not_silently_dropped(self):
        data = trips_csv(
            [
                "xx,2015-07-01 08:30:00,2015-07-01 08:35:01,31000,31001,W1,Member",
                "301,2015-07-01 08:30:00,2015-07-01 08:35:01,31000,31001,W2,Member",
                "301,not-a-date,2015-07-01 08:35:01,31000,31001,W3,Member",
            ]
        )
        result = parse_trips(io.BytesIO(data))
        assert len(result.trips) == 1
        assert [d.row for d in result.diagnostics] == [2, 4]
        assert all(d.reason == "parse_error" and d.excluded for d in result.diagnostics)
        assert result.row_count == 3

    def test_duration_mismatch_is_warning_and_duration_wins(self):
        data = trips_csv(["500,2015-07-01 08:30:00,2015-07-01 08:35:00,31000,31001,W1,Member"])
        result = parse_trips(io.BytesIO(data))
        assert len(result.trips) == 1
        assert result.trips[0].duration == 500
        (diag,) = result.diagnostics
        assert diag.reason == "duration_mismatch"
        assert not diag.excluded

    def test_mismatch_within_60s_tolerated_silently(self):
        data = trips_csv(["360,2015-07-01 08:30:00,2015-07-01 08:35:00,31000,31001,W1,Member"])
        result = parse_trips(io.BytesIO(data))
        assert result.diagnostics == []

    def test_member_type_variants(self):
        data = trips_csv(
            [
                "301,2015-07-01 08:30:00,2015-07-01 08:35:01,1,2,W1,Registered",
                "301,2015-07-01 08:30:00,2015-07-01 08:35:01,1,2,W1,Casual",
                "301,2015-07-01 08:30:00,2015-07-01 08:35:01,1,2,W1,Day Key",
            ]
        )
        result = parse_trips(io.BytesIO(data))
        assert [t.member_type for t in result.trips] == ["member", "casual", "unknown"]

    def test_custom_column_map_and_delimiter(self):
        data = b"dur;st;en;a;b;bike;mt\n120;2015-01-06 09:00:00;2015-01-06 09:02:00;X;Y;B9;casual\n"
        result = parse_trips(
            io.BytesIO(data),
            column_map={
                "duration": "dur", "start_time": "st", "end_time": "en",
                "start_station": "a", "end_station": "b", "bike_id": "bike", "member_type": "mt",
            },
            delimiter=";",
        )
        assert result.trips[0].start_station == "X"
        assert result.trips[0].member_type == "casual"

    def test_round_trip_is_bit_exact(self, tmp_path):
        rows = [
            "301,2015-07-01 08:30:00,2015-07-01 08:35:01,31000,31001,W20001,Member",
            "75,2015-12-31 23:58:00,2016-01-01 00:00:05,31002,31000,W20002,Casual",
        ]
        first = parse_trips(io.BytesIO(trips_csv(rows)))
        out = io.StringIO()
        write_trips(first.trips, out)
        second = parse_trips(out.getvalue().encode("utf-8"))
        fields = ("duration", "start_time", "end_time", "start_station", "end_station", "bike_id", "member_type")
        for a, b in zip(first.trips, second.trips):
            for f in fields:
                assert getattr(a, f) == getattr(b, f)


class TestClean:
    def test_too_short_removed(self):
        kept, report = clean_trips([make_trip(duration=59)])
        assert kept == []
        assert report.removed == [("t1", "too_short")]

    def test_same_station_short_removed(self):
        kept, report = clean_trips([make_trip(duration=90, start_station="A", end_station="A")])
        assert kept == []
        assert report.removed == [("t1", "same_station_short")]

    def test_short_distinct_station_trip_kept(self):
        kept, report = clean_trips([make_trip(duration=90)])
        assert len(kept) == 1
        assert report.removed == []

    def test_boundaries(self):
        kept, _ = clean_trips([make_trip(duration=60), make_trip(trip_id="t2", duration=120, start_station="A", end_station="A")])
        assert len(kept) == 2

    def test_report_invariant_and_order_preserved(self):
        trips = [
            make_trip(trip_id="a", duration=300),
            make_trip(trip_id="b", duration=10),
            make_trip(trip_id="c", duration=200),
        ]
        kept, report = clean_trips(trips)
        assert [t.trip_id for t in kept] == ["a", "c"]
        assert report.kept_count + len(report.removed) == report.input_count == 3

    @given(st.lists(st.tuples(st.integers(0, 200), st.booleans()), max_size=40))
    def test_idempotent(self, spec):
        trips = [
            make_trip(trip_id=f"t{i}", duration=dur, start_station="A", end_station="A" if same else "B")
            for i, (dur, same) in enumerate(spec)
        ]
        once, _ = clean_trips(trips)
        twice, report = clean_trips(once)
        assert twice == once
        assert report.removed == []


class TestPartition:
    def test_quarter_by_start_date(self):
        tables = partition_events([make_trip(start="2015-07-01 08:30:00")])
        assert list(tables) == [(2015, 3)]

    def test_conservation(self):
        trips = [make_trip(trip_id=f"t{i}", start=f"2015-07-{i + 1:02d} 10:00:00") for i in range(10)]
        tables = partition_events(trips)
        table = tables[(2015, 3)]
        assert len(table) == 20
        assert table.counts_by_station(PICKUP).sum() == 10
        assert table.counts_by_station(DROPOFF).sum() == 10

    def test_midnight_spanning_weekend_trip(self):
        # Sat 23:50 -> Sun 00:10: the two events sit on different dates, same quarter.
        trips = [make_trip(start="2015-07-04 23:50:00", end="2015-07-05 00:10:00", duration=1200)]
        table = partition_events(trips)[(2015, 3)]
        events = list(table.iter_events())
        pickup = next(e for e in events if e.kind == PICKUP)
        dropoff = next(e for e in events if e.kind == DROPOFF)
        assert pickup.day == date(2015, 7, 4) and pickup.day_type == WEEKEND
        assert dropoff.day == date(2015, 7, 5) and dropoff.day_type == WEEKEND

    def test_weekday_trip(self):
        trips = [make_trip(start="2015-01-06 09:00:00")]
        table = partition_events(trips)[(2015, 1)]
        assert all(e.day_type == WEEKDAY for e in table.iter_events())

    def test_quarter_boundary_dropoff_stays_with_start_quarter(self):
        trips = [make_trip(start="2015-09-30 23:55:00", end="2015-10-01 00:05:00", duration=600)]
        tables = partition_events(trips)
        assert list(tables) == [(2015, 3)]
        dropoff_days = [e.day for e in tables[(2015, 3)].iter_events() if e.kind == DROPOFF]
        assert dropoff_days == [date(2015, 10, 1)]

    def test_event_dates_lie_in_quarter_range(self):
        trips = [make_trip(trip_id=f"t{i}", start=f"2015-08-{i + 1:02d} 12:00:00") for i in range(20)]
        table = partition_events(trips)[(2015, 3)]
        for e in table.iter_events():
            assert date(2015, 7, 1) <= e.day <= date(2015, 9, 30)

    def test_events_from_trip_expansion(self):
        trip = make_trip()
        pickup, dropoff = events_from_trip(trip)
        assert pickup.kind == PICKUP and pickup.station == "A" and pickup.time == trip.start_time
        assert dropoff.kind == DROPOFF and dropoff.station == "B" and dropoff.time == trip.end_time

    def test_table_round_trips_through_events(self):
        trips = [make_trip(trip_id=f"t{i}", start=f"2015-07-0{i + 1} 0{i}:30:0{i}") for i in range(5)]
        table = partition_events(trips)[(2015, 3)]
        rebuilt = EventTable.from_events(table.iter_events(), table.year, table.quarter)
        assert [e for e in rebuilt.iter_events()] == [e for e in table.iter_events()]


class TestLowActivityFilter:
    def _events(self, station, n, kind):
        return [ev(station, f"2015-07-{(i % 28) + 1:02d} 10:{i % 60:02d}:00", kind) for i in range(n)]

    def test_below_threshold_excluded(self):
        events = self._events("A", 400, PICKUP)
        pickup_excluded, dropoff_excluded = filter_low_activity_stations(events, 92)
        assert "A" in pickup_excluded  # 400 / 92 < 5
        assert "A" in dropoff_excluded  # zero dropoffs

    def test_exactly_five_daily_average_kept(self):
        events = self._events("A", 460, PICKUP)
        pickup_excluded, _ = filter_low_activity_stations(events, 92)
        assert "A" not in pickup_excluded  # 460 / 92 == 5.0, rule is strict less-than

    def test_zero_event_station_in_both_sets(self):
        pickup_excluded, dropoff_excluded = filter_low_activity_stations([], 92, stations=["ghost"])
        assert "ghost" in pickup_excluded and "ghost" in dropoff_excluded

    def test_per_dataset_exclusion(self):
        events = self._events("A", 460, PICKUP) + self._events("A", 10, DROPOFF)
        pickup_excluded, dropoff_excluded = filter_low_activity_stations(events, 92)
        assert "A" not in pickup_excluded
        assert "A" in dropoff_excluded

    def test_table_and_event_paths_agree(self):
        events = self._events("A", 460, PICKUP) + self._events("B", 10, DROPOFF)
        table = EventTable.from_events(events, 2015, 3)
        assert filter_low_activity_stations(events, 92) == filter_low_activity_stations(table, 92)

    def test_bad_day_count(self):
        with pytest.raises(ConfigError):
            filter_low_activity_stations([], 0)


class TestCalendar:
    def test_days_in_quarter(self):
        assert days_in_quarter(2015, 3) == 92
        assert days_in_quarter(2015, 1) == 90
        assert days_in_quarter(2016, 1) == 91  # leap year
        assert days_in_quarter(2015, 4) == 92

    def test_quarter_of(self):
        assert quarter_of(date(2015, 1, 1)) == 1
        assert quarter_of(date(2015, 4, 1)) == 2
        assert quarter_of(date(2015, 6, 30)) == 2
        assert quarter_of(date(2015, 12, 31)) == 4


class TestStationCatalog:
    def test_csv_catalog(self, stations_csv):
        path = stations_csv(["31000,Main & 1st,38.9,-77.03", "31001,Elm Plaza,38.91,-77.04"])
        catalog = load_stations(path)
        assert catalog["31000"].name == "Main & 1st"
        assert catalog["31001"].latitude == pytest.approx(38.91)

    def test_geojson_catalog(self, tmp_path):
        doc = {
            "type": "FeatureCollection",
            "features": [
                {
                    "type": "Feature",
                    "geometry": {"type": "Point", "coordinates": [-77.03, 38.9]},
                    "properties": {"id": "31000", "name": "Main & 1st"},
                }
            ],
        }
        path = tmp_path / "stations.geojson"
        import json

        path.write_text(json.dumps(doc), encoding="utf-8")
        catalog = load_stations(path)
        assert catalog["31000"].longitude == pytest.approx(-77.03)

    def test_duplicate_id_rejected(self, stations_csv):
        path = stations_csv(["31000,A,38.9,-77.0", "31000,B,38.8,-77.1"])
        with pytest.raises(ConfigError, match="duplicate"):
            load_stations(path)

    def test_out_of_range_coordinates_rejected(self, stations_csv):
        path = stations_csv(["31000,A,99.0,-77.0"])
        with pytest.raises(ConfigError, match="out-of-range"):
            load_stations(path)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="nope.csv"):
            parse_trips("nope.csv")
