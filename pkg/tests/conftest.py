"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

import io
from datetime import date, datetime, timedelta

import pytest

from bikebalance.ingest import DROPOFF, PICKUP, Event, TripRecord, day_type_of

TRIP_HEADER = "Duration,Start date,End date,Start station number,End station number,Bike number,Member type"


def trips_csv(rows: list[str], header: str = TRIP_HEADER) -> bytes:
    return ("\n".join([header] + rows) + "\n").encode("utf-8")


def make_trip(
    trip_id="t1",
    start="2015-07-01 08:30:00",
    end=None,
    duration=300,
    start_station="A",
    end_station="B",
    bike_id="W0001",
    member_type="member",
) -> TripRecord:
    start_dt = datetime.fromisoformat(start)
    end_dt = datetime.fromisoformat(end) if end else start_dt + timedelta(seconds=duration)
    return TripRecord(trip_id, start_dt, end_dt, duration, start_station, end_station, bike_id, member_type)


def ev(station: str, when: str, kind: str = PICKUP) -> Event:
    t = datetime.fromisoformat(when)
    return Event(station, t, kind, t.date(), day_type_of(t.date()))


def ev_at(station: str, day: date, second_of_day: int, kind: str) -> Event:
    t = datetime(day.year, day.month, day.day) + timedelta(seconds=second_of_day)
    return Event(station, t, kind, t.date(), day_type_of(t.date()))


@pytest.fixture
def stations_csv(tmp_path):
    def build(rows, path_name="stations.csv"):
        path = tmp_path / path_name
        path.write_text("id,name,lat,lon\n" + "\n".join(rows) + "\n", encoding="utf-8")
        return path

    return build
