"""Hourly station profiles: per-day binning, normalization and aggregation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractViolationError, NotDefinedForEmptyDayError
from .ingest import (
    DROPOFF,
    PICKUP,
    WEEKDAY,
    WEEKEND,
    Event,
    EventTable,
    quarter_date_range,
)

logger = logging.getLogger(__name__)

N_BINS = 24
UNIT_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True, slots=True)
class DayVector:
    """Hourly event counts for one station, date and kind. Bin b is counts[b-1]."""

    station: str
    date: date
    kind: str
    counts: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True, slots=True)
class NormalizedDayVector:
    """A DayVector divided by its own total. Only defined for days with events."""

    station: str
    date: date
    kind: str
    fractions: tuple[float, ...]


@dataclass(eq=False)
class StationProfile:
    """A station's mean normalized hourly distribution, split weekday/weekend."""

    station: str
    kind: str
    weekday_profile: np.ndarray
    weekend_profile: np.ndarray
    active_weekdays: int
    active_weekend_days: int

    @property
    def feature(self) -> np.ndarray:
        """48-dimensional clustering feature: weekday profile ++ weekend profile."""
        return np.concatenate([self.weekday_profile, self.weekend_profile])


@dataclass(frozen=True, slots=True)
class Excluded:
    """A station dropped from profiling, with the reason."""

    station: str
    kind: str
    reason: str


def bin_of_second(second_of_day: int) -> tuple[int, int]:
    """Map a second-of-day to (date_shift, bin).

    Bins are right-closed hour intervals (b-1, b]: an event strictly inside an
    hour belongs to the next integer hour and an on-the-hour event belongs to
    its own hour. Exactly-midnight events wrap to bin 24 of the previous date,
    signalled by date_shift -1.
    """
    if second_of_day == 0:
        return -1, 24
    return 0, (second_of_day + 3599) // 3600


def bin_events(
    events: Iterable[Event],
    station: str | None = None,
    day: date | None = None,
    kind: str | None = None,
) -> DayVector:
    """Aggregate one station-day's events of one kind into 24 hourly bins.

    All events must share a single station, kind and adjusted date (the date
    after the midnight wrap). For an empty event list the identifying
    ``station``, ``day`` and ``kind`` arguments are required.
    """
    counts = [0] * N_BINS
    for e in events:
        if station is None:
            station = e.station
        elif e.station != station:
            raise ContractViolationError(f"mixed stations in one day vector: {station} vs {e.station}")
        if kind is None:
            kind = e.kind
        elif e.kind != kind:
            raise ContractViolationError(f"mixed event kinds in one day vector: {kind} vs {e.kind}")
        shift, b = bin_of_second(e.time.hour * 3600 + e.time.minute * 60 + e.time.second)
        adjusted = e.day + timedelta(days=shift)
        if day is None:
            day = adjusted
        elif adjusted != day:
            raise ContractViolationError(f"mixed dates in one day vector: {day} vs {adjusted}")
        counts[b - 1] += 1
    if station is None or day is None or kind is None:
        raise ContractViolationError("empty event list needs explicit station, day and kind")
    return DayVector(station, day, kind, tuple(counts))


def normalize_day(v: DayVector) -> NormalizedDayVector:
    """Divide a day's counts by the day total."""
    total = v.total
    if total < 1:
        raise NotDefinedForEmptyDayError(f"station {v.station} has no {v.kind} events on {v.date}")
    return NormalizedDayVector(v.station, v.date, v.kind, tuple(c / total for c in v.counts))


def build_station_profile(days: Sequence[NormalizedDayVector]) -> StationProfile | Excluded:
    """Average one station's normalized day vectors into its weekday/weekend profile.

    Days are weighted equally regardless of volume. A station lacking either
    weekday or weekend activity is excluded rather than given a partial feature.
    Input order never matters: days are canonicalized by date before averaging.
    """
    if not days:
        raise ContractViolationError("build_station_profile needs at least one day vector")
    station = days[0].station
    kind = days[0].kind
    for v in days:
        if v.station != station or v.kind != kind:
            raise ContractViolationError("day vectors mix stations or kinds")
    ordered = sorted(days, key=lambda v: v.date)
    weekday_rows = [v.fractions for v in ordered if v.date.weekday() < 5]
    weekend_rows = [v.fractions for v in ordered if v.date.weekday() >= 5]
    if not weekday_rows:
        return Excluded(station, kind, "no_weekday_data")
    if not weekend_rows:
        return Excluded(station, kind, "no_weekend_data")
    return StationProfile(
        station=station,
        kind=kind,
        weekday_profile=np.mean(weekday_rows, axis=0),
        weekend_profile=np.mean(weekend_rows, axis=0),
        active_weekdays=len(weekday_rows),
        active_weekend_days=len(weekend_rows),
    )


def _binned_counts(table: EventTable, kind: str) -> tuple[np.ndarray, int]:
    """Per (station, adjusted date, bin) counts as a dense (S, D, 24) grid.

    Returns the grid and the date ordinal of its first column.
    """
    mask = table.kind_code == (0 if kind == PICKUP else 1)
    station = table.station_code[mask]
    secs = table.second_of_day[mask].astype(np.int64)
    adj_date = table.date_ordinal[mask] - (secs == 0)
    bins = np.where(secs == 0, 23, (secs + 3599) // 3600 - 1)
    n_stations = len(table.stations)
    if len(station) == 0:
        return np.zeros((n_stations, 1, N_BINS), dtype=np.int64), 0
    d0 = int(adj_date.min())
    n_days = int(adj_date.max()) - d0 + 1
    flat = (station.astype(np.int64) * n_days + (adj_date - d0)) * N_BINS + bins
    counts = np.bincount(flat, minlength=n_stations * n_days * N_BINS)
    return counts.reshape(n_stations, n_days, N_BINS), d0


def build_profiles(
    table: EventTable,
    kind: str,
    *,
    exclude: Iterable[str] = (),
) -> tuple[list[StationProfile], list[Excluded]]:
    """Build every station's profile for one kind from a quarter's events.

    Stations named in ``exclude`` are reported as excluded with reason
    ``"low_activity"``; stations missing a day type are excluded as in
    :func:`build_station_profile`.
    """
    excluded_input = set(exclude)
    counts, d0 = _binned_counts(table, kind)
    n_stations, n_days, _ = counts.shape
    totals = counts.sum(axis=2)
    weekday_mask = (np.arange(d0, d0 + n_days) - 1) % 7 < 5

    profiles: list[StationProfile] = []
    excluded: list[Excluded] = []
    for s in sorted(range(n_stations), key=lambda i: table.stations[i]):
        sid = table.stations[s]
        if sid in excluded_input:
            excluded.append(Excluded(sid, kind, "low_activity"))
            continue
        active = totals[s] > 0
        wd = active & weekday_mask
        we = active & ~weekday_mask
        if not totals[s].any():
            continue  # station never produced this kind of event
        if not wd.any():
            excluded.append(Excluded(sid, kind, "no_weekday_data"))
            continue
        if not we.any():
            excluded.append(Excluded(sid, kind, "no_weekend_data"))
            continue
        fractions_wd = counts[s, wd] / totals[s, wd, None]
        fractions_we = counts[s, we] / totals[s, we, None]
        profiles.append(
            StationProfile(
                station=sid,
                kind=kind,
                weekday_profile=fractions_wd.mean(axis=0),
                weekend_profile=fractions_we.mean(axis=0),
                active_weekdays=int(wd.sum()),
                active_weekend_days=int(we.sum()),
            )
        )
    return profiles, excluded


def feature_matrix(profiles: Iterable[StationProfile]) -> dict[str, np.ndarray]:
    """Station id -> 48-dim feature mapping, ready for clustering."""
    return {p.station: p.feature for p in profiles}


def hourly_usage_summary(
    events: EventTable | Iterable[Event],
    year: int | None = None,
    quarter: int | None = None,
) -> dict[str, np.ndarray]:
    """Mean events per hour of week, per kind, as 7x24 matrices.

    Row d is the day of week (0 = Monday), column b-1 the hourly bin; each cell
    is the kind's event total there divided by how many times that day of week
    occurs in the quarter's calendar.
    """
    if isinstance(events, EventTable):
        year = events.year
        quarter = events.quarter
        per_kind: dict[str, np.ndarray] = {}
        for kind in (PICKUP, DROPOFF):
            mask = events.kind_code == (0 if kind == PICKUP else 1)
            secs = events.second_of_day[mask].astype(np.int64)
            adj_date = events.date_ordinal[mask] - (secs == 0)
            bins = np.where(secs == 0, 23, (secs + 3599) // 3600 - 1)
            dow = (adj_date - 1) % 7
            totals = np.bincount(dow * N_BINS + bins, minlength=7 * N_BINS).reshape(7, N_BINS)
            per_kind[kind] = totals.astype(float)
    else:
        if year is None or quarter is None:
            raise ContractViolationError("year and quarter are required for plain event streams")
        per_kind = {PICKUP: np.zeros((7, N_BINS)), DROPOFF: np.zeros((7, N_BINS))}
        for e in events:
            shift, b = bin_of_second(e.time.hour * 3600 + e.time.minute * 60 + e.time.second)
            adjusted = e.day + timedelta(days=shift)
            per_kind[e.kind][adjusted.weekday(), b - 1] += 1

    first, last = quarter_date_range(year, quarter)
    occurrences = np.zeros(7)
    d = first
    while d <= last:
        occurrences[d.weekday()] += 1
        d += timedelta(days=1)
    for kind in per_kind:
        per_kind[kind] = per_kind[kind] / occurrences[:, None]
    return per_kind


PROFILE_CSV_FIELDS = (
    ["station_id", "kind"]
    + [f"wd_h{b}" for b in range(1, N_BINS + 1)]
    + [f"we_h{b}" for b in range(1, N_BINS + 1)]
)


def profiles_to_rows(profiles: Iterable[StationProfile]) -> list[dict[str, str]]:
    rows = []
    for p in sorted(profiles, key=lambda p: (p.station, p.kind)):
        row = {"station_id": p.station, "kind": p.kind}
        for b in range(N_BINS):
            row[f"wd_h{b + 1}"] = f"{p.weekday_profile[b]:.6f}"
            row[f"we_h{b + 1}"] = f"{p.weekend_profile[b]:.6f}"
        rows.append(row)
    return rows


def write_profiles_csv(profiles: Iterable[StationProfile], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as stream:
        writer = csv.DictWriter(stream, fieldnames=PROFILE_CSV_FIELDS)
        writer.writeheader()
        writer.writerows(profiles_to_rows(profiles))
