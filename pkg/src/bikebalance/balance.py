"""Shortage/excess indices: per-day extremes, ADMS/ADME and imbalance categories."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import date, time
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractViolationError
from .ingest import PICKUP, EventTable, Event, days_in_quarter

logger = logging.getLogger(__name__)

N_CATEGORIES = 8
DEFAULT_BIN_WIDTH = 5.0
DEFAULT_SELF_BALANCED_THRESHOLD = 5.0


@dataclass(frozen=True)
class BalanceWindow:
    """A time-of-day window, inclusive at both ends, within one calendar day."""

    label: str
    start: time
    end: time

    def __post_init__(self):
        if self.start > self.end:
            raise ConfigError(f"window '{self.label}' has start after end")

    @property
    def start_second(self) -> int:
        return self.start.hour * 3600 + self.start.minute * 60 + self.start.second

    @property
    def end_second(self) -> int:
        return self.end.hour * 3600 + self.end.minute * 60 + self.end.second

    def to_dict(self) -> dict:
        return {"label": self.label, "start": self.start.isoformat(), "end": self.end.isoformat()}

    @classmethod
    def from_dict(cls, doc: dict) -> "BalanceWindow":
        return cls(doc["label"], time.fromisoformat(doc["start"]), time.fromisoformat(doc["end"]))


@dataclass(frozen=True, slots=True)
class DayExtremes:
    """Largest shortage and excess reached by the running counter in one day."""

    station: str
    date: date
    window: str
    max_shortage: int
    max_excess: int


@dataclass(frozen=True, slots=True)
class BalanceIndex:
    """Average daily maximum shortage/excess for one station and window."""

    station: str
    window: str
    adms: float
    adme: float
    category_by_adms: int
    category_by_adme: int
    category_combined: int
    self_balanced: bool


def standard_windows() -> list[BalanceWindow]:
    """The four default analysis windows: full day plus the three peak periods."""
    return [
        BalanceWindow("full_day", time(0, 0, 0), time(23, 59, 59)),
        BalanceWindow("morning", time(6, 0, 0), time(10, 59, 59)),
        BalanceWindow("afternoon", time(16, 0, 0), time(19, 59, 59)),
        BalanceWindow("midday", time(12, 0, 0), time(15, 59, 59)),
    ]


def day_extremes(
    events: Sequence[Event],
    window: str = "full_day",
    *,
    station: str | None = None,
    day: date | None = None,
) -> DayExtremes:
    """Scan one station-day's in-window events with the running counter.

    The counter starts at 0, goes up on a pickup and down on a dropoff; the
    day's maximum shortage is the largest positive value it reaches, the
    maximum excess the absolute largest negative value. Events must come
    sorted by (time, kind) with pickups ahead of dropoffs at equal times.
    """
    counter = 0
    high = 0
    low = 0
    last_key = None
    for e in events:
        if station is None:
            station = e.station
        elif e.station != station:
            raise ContractViolationError(f"mixed stations in one day scan: {station} vs {e.station}")
        if day is None:
            day = e.day
        elif e.day != day:
            raise ContractViolationError(f"mixed dates in one day scan: {day} vs {e.day}")
        key = (e.time, 0 if e.kind == PICKUP else 1)
        if last_key is not None and key < last_key:
            raise ContractViolationError("events are not sorted by (time, pickup-before-dropoff)")
        last_key = key
        counter += 1 if e.kind == PICKUP else -1
        if counter > high:
            high = counter
        elif counter < low:
            low = counter
    if station is None or day is None:
        raise ContractViolationError("empty event list needs explicit station and day")
    return DayExtremes(station, day, window, high, -low)


def category_of(value: float, bin_width: float = DEFAULT_BIN_WIDTH) -> int:
    """Imbalance category 1..8 for a value, with right-closed width-5 bins.

    Category 1 covers value <= bin_width; the top category is open-ended.
    """
    if value < 0:
        raise ConfigError(f"index values are non-negative, got {value}")
    if bin_width <= 0:
        raise ConfigError(f"bin width must be positive, got {bin_width}")
    return min(N_CATEGORIES, max(1, math.ceil(value / bin_width)))


def categorize(
    adms: float,
    adme: float,
    *,
    bin_width: float = DEFAULT_BIN_WIDTH,
    self_balanced_threshold: float = DEFAULT_SELF_BALANCED_THRESHOLD,
) -> tuple[int, int, int, bool]:
    """Categories for ADMS, ADME and their maximum, plus the self-balanced flag.

    A station is self-balanced when both indices are at or below the threshold.
    """
    cat_adms = category_of(adms, bin_width)
    cat_adme = category_of(adme, bin_width)
    cat_combined = category_of(max(adms, adme), bin_width)
    self_balanced = adms <= self_balanced_threshold and adme <= self_balanced_threshold
    return cat_adms, cat_adme, cat_combined, self_balanced


def adms_adme(
    extremes: Iterable[DayExtremes],
    n_days: int,
    *,
    station: str | None = None,
    window: str | None = None,
    bin_width: float = DEFAULT_BIN_WIDTH,
    self_balanced_threshold: float = DEFAULT_SELF_BALANCED_THRESHOLD,
) -> BalanceIndex:
    """Average one station's daily extremes over all calendar days of a quarter.

    Days with no events contribute 0, so only the extreme totals and the
    calendar day count matter.
    """
    if n_days <= 0:
        raise ConfigError(f"quarter must contain at least one day, got {n_days}")
    shortage_total = 0
    excess_total = 0
    for ex in extremes:
        if station is None:
            station = ex.station
        elif ex.station != station:
            raise ContractViolationError(f"mixed stations: {station} vs {ex.station}")
        if window is None:
            window = ex.window
        elif ex.window != window:
            raise ContractViolationError(f"mixed windows: {window} vs {ex.window}")
        shortage_total += ex.max_shortage
        excess_total += ex.max_excess
    if station is None or window is None:
        raise ContractViolationError("no extremes given and no explicit station/window")
    adms = shortage_total / n_days
    adme = excess_total / n_days
    cat_adms, cat_adme, cat_combined, self_balanced = categorize(
        adms, adme, bin_width=bin_width, self_balanced_threshold=self_balanced_threshold
    )
    return BalanceIndex(station, window, adms, adme, cat_adms, cat_adme, cat_combined, self_balanced)


def self_balanced_fraction(indices: Sequence[BalanceIndex]) -> float:
    """Share of stations flagged self-balanced."""
    if not indices:
        raise ConfigError("cannot take the self-balanced fraction of zero stations")
    return sum(1 for ix in indices if ix.self_balanced) / len(indices)


def _window_extreme_arrays(table: EventTable, window: BalanceWindow):
    """Per (station, date) extremes for all in-window events, vectorized."""
    mask = (table.second_of_day >= window.start_second) & (table.second_of_day <= window.end_second)
    station = table.station_code[mask]
    if len(station) == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty.astype(np.int32), empty, empty, empty
    day = table.date_ordinal[mask]
    secs = table.second_of_day[mask]
    kind = table.kind_code[mask]
    order = np.lexsort((kind, secs, day, station))
    station = station[order]
    day = day[order]
    delta = np.where(kind[order] == 0, 1, -1)

    run = np.cumsum(delta)
    new_segment = np.empty(len(station), dtype=bool)
    new_segment[0] = True
    np.logical_or(station[1:] != station[:-1], day[1:] != day[:-1], out=new_segment[1:])
    starts = np.flatnonzero(new_segment)
    base = np.empty(len(starts), dtype=np.int64)
    base[0] = 0
    base[1:] = run[starts[1:] - 1]
    seg_max = np.maximum.reduceat(run, starts) - base
    seg_min = np.minimum.reduceat(run, starts) - base
    shortage = np.maximum(seg_max, 0)
    excess = np.maximum(-seg_min, 0)
    return station[starts], day[starts], shortage, excess


def window_extremes(table: EventTable, window: BalanceWindow) -> list[DayExtremes]:
    """Daily extremes of every active (station, date) cell for one window."""
    station, day, shortage, excess = _window_extreme_arrays(table, window)
    return [
        DayExtremes(
            table.stations[station[i]],
            date.fromordinal(int(day[i])),
            window.label,
            int(shortage[i]),
            int(excess[i]),
        )
        for i in range(len(station))
    ]


def balance_indices(
    table: EventTable,
    window: BalanceWindow,
    *,
    n_days: int | None = None,
    stations: Iterable[str] | None = None,
    bin_width: float = DEFAULT_BIN_WIDTH,
    self_balanced_threshold: float = DEFAULT_SELF_BALANCED_THRESHOLD,
) -> list[BalanceIndex]:
    """ADMS/ADME for every station over one window of the table's quarter.

    Stations default to every station appearing in the table; all-quiet
    stations get a zero index and count as self-balanced.
    """
    if n_days is None:
        n_days = days_in_quarter(table.year, table.quarter)
    if n_days <= 0:
        raise ConfigError(f"quarter must contain at least one day, got {n_days}")
    station_codes, _, shortage, excess = _window_extreme_arrays(table, window)
    n_stations = len(table.stations)
    shortage_totals = np.bincount(station_codes, weights=shortage, minlength=n_stations)
    excess_totals = np.bincount(station_codes, weights=excess, minlength=n_stations)

    wanted = set(stations) if stations is not None else set(table.stations)
    code_of = {sid: i for i, sid in enumerate(table.stations)}
    out = []
    for sid in sorted(wanted):
        code = code_of.get(sid)
        adms = shortage_totals[code] / n_days if code is not None else 0.0
        adme = excess_totals[code] / n_days if code is not None else 0.0
        cat_adms, cat_adme, cat_combined, flag = categorize(
            adms, adme, bin_width=bin_width, self_balanced_threshold=self_balanced_threshold
        )
        out.append(BalanceIndex(sid, window.label, float(adms), float(adme), cat_adms, cat_adme, cat_combined, flag))
    return out
