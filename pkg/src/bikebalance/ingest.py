"""Trip-record ingestion: CSV parsing, cleaning rules and event partitioning.

The parser is deliberately streaming and allocation-light; a quarter of the
source system's data is around a million rows and the whole ingest leg has to
stay interactive.
"""

from __future__ import annotations

import calendar
import csv
import io
import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

import numpy as np

from .errors import ConfigError, ContractViolationError

logger = logging.getLogger(__name__)

PICKUP = "pickup"
DROPOFF = "dropoff"
WEEKDAY = "weekday"
WEEKEND = "weekend"

MEMBER = "member"
CASUAL = "casual"
UNKNOWN = "unknown"

DEFAULT_TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"

# Header names match the 2015 Capital Bikeshare trip files; trip_id has no
# column there and is synthesized from the row number when left unmapped.
DEFAULT_COLUMN_MAP: dict[str, str | None] = {
    "duration": "Duration",
    "start_time": "Start date",
    "end_time": "End date",
    "start_station": "Start station number",
    "end_station": "End station number",
    "bike_id": "Bike number",
    "member_type": "Member type",
    "trip_id": None,
}

SCHEMA_FIELDS = (
    "duration",
    "start_time",
    "end_time",
    "start_station",
    "end_station",
    "bike_id",
    "member_type",
)

# Tolerated disagreement between the duration column and the timestamp delta.
DURATION_MISMATCH_TOLERANCE_S = 60

_MEMBER_TYPES = {
    "member": MEMBER,
    "registered": MEMBER,
    "subscriber": MEMBER,
    "casual": CASUAL,
}

_MEMBER_LABELS = {MEMBER: "Member", CASUAL: "Casual", UNKNOWN: "Unknown"}

# date.toordinal() of 1970-01-01, for datetime64 <-> ordinal conversion.
_EPOCH_ORDINAL = 719163


@dataclass(slots=True)
class TripRecord:
    """One rental, after parsing. Durations are seconds."""

    trip_id: str
    start_time: datetime
    end_time: datetime
    duration: int
    start_station: str
    end_station: str
    bike_id: str
    member_type: str


@dataclass(frozen=True, slots=True)
class StationInfo:
    """Station identity and WGS84 location."""

    id: str
    name: str
    latitude: float
    longitude: float


@dataclass(frozen=True, slots=True)
class Event:
    """A single pickup or dropoff at a station."""

    station: str
    time: datetime
    kind: str
    day: date
    day_type: str


@dataclass(frozen=True, slots=True)
class ParseDiagnostic:
    row: int
    reason: str
    message: str
    excluded: bool


@dataclass(slots=True)
class ParseResult:
    trips: list[TripRecord]
    diagnostics: list[ParseDiagnostic]
    row_count: int

    @property
    def excluded_rows(self) -> list[ParseDiagnostic]:
        return [d for d in self.diagnostics if d.excluded]


@dataclass
class CleaningReport:
    """Outcome of the trip-level cleaning pass.

    The station exclusion sets are filled in later by the pipeline once the
    low-activity filter has run; ``clean_trips`` leaves them empty.
    """

    input_count: int
    kept_count: int
    removed: list[tuple[str, str]]
    excluded_stations_pickup: set[str] = field(default_factory=set)
    excluded_stations_dropoff: set[str] = field(default_factory=set)

    def to_json_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "kept_count": self.kept_count,
            "removed": [[trip_id, reason] for trip_id, reason in self.removed],
            "excluded_stations_pickup": sorted(self.excluded_stations_pickup),
            "excluded_stations_dropoff": sorted(self.excluded_stations_dropoff),
        }


def quarter_of(d: date) -> int:
    """Calendar quarter, 1..4 (Q1 = Jan-Mar)."""
    return (d.month - 1) // 3 + 1


def days_in_quarter(year: int, quarter: int) -> int:
    """Number of calendar days in the given quarter."""
    if quarter not in (1, 2, 3, 4):
        raise ConfigError(f"quarter must be 1..4, got {quarter}")
    months = range(3 * (quarter - 1) + 1, 3 * (quarter - 1) + 4)
    return sum(calendar.monthrange(year, m)[1] for m in months)


def quarter_date_range(year: int, quarter: int) -> tuple[date, date]:
    """First and last calendar date of the quarter (inclusive)."""
    first_month = 3 * (quarter - 1) + 1
    last_month = first_month + 2
    return (
        date(year, first_month, 1),
        date(year, last_month, calendar.monthrange(year, last_month)[1]),
    )


def day_type_of(d: date) -> str:
    return WEEKEND if d.weekday() >= 5 else WEEKDAY


def _open_text(source) -> TextIO:
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"input file not found: {path}")
        return path.open("r", encoding="utf-8", newline="")
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, io.TextIOBase) or (hasattr(source, "read") and isinstance(source.read(0), str)):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _resolve_columns(header: Sequence[str], column_map: Mapping[str, str | None]) -> dict[str, int]:
    positions = {name: i for i, name in enumerate(header)}
    indices: dict[str, int] = {}
    for field_name in SCHEMA_FIELDS:
        column = column_map.get(field_name)
        if column is None:
            raise ConfigError(f"column_map does not name a column for field '{field_name}'")
        if column not in positions:
            raise ConfigError(f"mapped column '{column}' (field '{field_name}') not in header {list(header)}")
        indices[field_name] = positions[column]
    trip_id_col = column_map.get("trip_id")
    if trip_id_col is not None:
        if trip_id_col not in positions:
            raise ConfigError(f"mapped column '{trip_id_col}' (field 'trip_id') not in header {list(header)}")
        indices["trip_id"] = positions[trip_id_col]
    return indices


def parse_trips(
    source,
    column_map: Mapping[str, str | None] | None = None,
    *,
    delimiter: str = ",",
    timestamp_format: str = DEFAULT_TIMESTAMP_FORMAT,
) -> ParseResult:
    """Parse delimiter-separated trip records into :class:`TripRecord` objects.

    Malformed rows are never silently dropped: each one produces a
    :class:`ParseDiagnostic` carrying the 1-based row number and a reason.
    A missing mapped column is a configuration error and raises.
    """
    cmap = dict(DEFAULT_COLUMN_MAP)
    if column_map:
        cmap.update(column_map)

    stream = _open_text(source)
    reader = csv.reader(stream, delimiter=delimiter)
    header = next(reader, None)
    if header is None:
        raise ConfigError("trip source is empty: expected a header row")
    idx = _resolve_columns(header, cmap)

    i_dur = idx["duration"]
    i_st = idx["start_time"]
    i_en = idx["end_time"]
    i_ss = idx["start_station"]
    i_es = idx["end_station"]
    i_bk = idx["bike_id"]
    i_mb = idx["member_type"]
    i_id = idx.get("trip_id")

    if timestamp_format == DEFAULT_TIMESTAMP_FORMAT:
        parse_ts = datetime.fromisoformat
    else:
        parse_ts = lambda s: datetime.strptime(s, timestamp_format)  # noqa: E731

    member_types = _MEMBER_TYPES
    station_cache: dict[str, str] = {}
    trips: list[TripRecord] = []
    diagnostics: list[ParseDiagnostic] = []
    append = trips.append
    row_number = 1
    for row in reader:
        row_number += 1
        try:
            duration = int(row[i_dur])
            start_time = parse_ts(row[i_st])
            end_time = parse_ts(row[i_en])
        except (ValueError, IndexError) as exc:
            diagnostics.append(ParseDiagnostic(row_number, "parse_error", str(exc), True))
            continue
        if duration < 0:
            diagnostics.append(
                ParseDiagnostic(row_number, "parse_error", f"negative duration {duration}", True)
            )
            continue
        if end_time < start_time:
            diagnostics.append(
                ParseDiagnostic(row_number, "parse_error", "end_time before start_time", True)
            )
            continue
        delta = (end_time - start_time).total_seconds()
        if duration - delta > DURATION_MISMATCH_TOLERANCE_S or delta - duration > DURATION_MISMATCH_TOLERANCE_S:
            # The duration column wins; the row is kept.
            diagnostics.append(
                ParseDiagnostic(
                    row_number,
                    "duration_mismatch",
                    f"duration {duration}s vs timestamp delta {delta:.0f}s",
                    False,
                )
            )
        start_station = station_cache.setdefault(row[i_ss], row[i_ss])
        end_station = station_cache.setdefault(row[i_es], row[i_es])
        member_raw = row[i_mb]
        member = member_types.get(member_raw) or member_types.get(member_raw.lower(), UNKNOWN)
        trip_id = row[i_id] if i_id is not None else f"row-{row_number}"
        append(
            TripRecord(
                trip_id, start_time, end_time, duration, start_station, end_station, row[i_bk], member
            )
        )

    result = ParseResult(trips, diagnostics, row_number - 1)
    if diagnostics:
        excluded = sum(1 for d in diagnostics if d.excluded)
        logger.info(
            "parsed %d rows: %d trips, %d excluded, %d warnings",
            result.row_count, len(trips), excluded, len(diagnostics) - excluded,
        )
    return result


def write_trips(
    trips: Iterable[TripRecord],
    sink,
    column_map: Mapping[str, str | None] | None = None,
    *,
    delimiter: str = ",",
    timestamp_format: str = DEFAULT_TIMESTAMP_FORMAT,
) -> None:
    """Serialize trips back to the CSV schema that :func:`parse_trips` reads."""
    cmap = dict(DEFAULT_COLUMN_MAP)
    if column_map:
        cmap.update(column_map)
    fields = list(SCHEMA_FIELDS)
    if cmap.get("trip_id") is not None:
        fields = ["trip_id"] + fields

    own_stream = isinstance(sink, (str, Path))
    stream = Path(sink).open("w", encoding="utf-8", newline="") if own_stream else sink
    iso = timestamp_format == DEFAULT_TIMESTAMP_FORMAT
    try:
        writer = csv.writer(stream, delimiter=delimiter)
        writer.writerow([cmap[f] for f in fields])
        for t in trips:
            if iso:
                st = t.start_time.isoformat(sep=" ")
                en = t.end_time.isoformat(sep=" ")
            else:
                st = t.start_time.strftime(timestamp_format)
                en = t.end_time.strftime(timestamp_format)
            row = [
                str(t.duration),
                st,
                en,
                t.start_station,
                t.end_station,
                t.bike_id,
                _MEMBER_LABELS[t.member_type],
            ]
            if fields[0] == "trip_id":
                row.insert(0, t.trip_id)
            writer.writerow(row)
    finally:
        if own_stream:
            stream.close()


def clean_trips(trips: Sequence[TripRecord], *,
                min_duration_s: int = 60,
                same_station_min_s: int = 120) -> tuple[list[TripRecord], CleaningReport]:
    """Apply the trip-level cleaning rules.

    Removes trips shorter than ``min_duration_s`` and round trips (same start
    and end station) shorter than ``same_station_min_s``. Order of kept trips
    is preserved and every removal carries a reason.
    """
    kept: list[TripRecord] = []
    removed: list[tuple[str, str]] = []
    for t in trips:
        if t.duration < min_duration_s:
            removed.append((t.trip_id, "too_short"))
        elif t.duration < same_station_min_s and t.start_station == t.end_station:
            removed.append((t.trip_id, "same_station_short"))
        else:
            kept.append(t)
    report = CleaningReport(input_count=len(trips), kept_count=len(kept), removed=removed)
    return kept, report


def events_from_trip(trip: TripRecord) -> tuple[Event, Event]:
    """Expand a trip into its pickup event and its dropoff event."""
    start_day = trip.start_time.date()
    end_day = trip.end_time.date()
    return (
        Event(trip.start_station, trip.start_time, PICKUP, start_day, day_type_of(start_day)),
        Event(trip.end_station, trip.end_time, DROPOFF, end_day, day_type_of(end_day)),
    )


@dataclass
class EventTable:
    """Columnar pickup/dropoff events for one (year, quarter).

    ``station_code`` indexes into ``stations``; ``kind_code`` is 0 for pickups
    and 1 for dropoffs so that sorting by (time, kind_code) puts pickups ahead
    of dropoffs at equal timestamps.
    """

    year: int
    quarter: int
    stations: tuple[str, ...]
    station_code: np.ndarray
    date_ordinal: np.ndarray
    second_of_day: np.ndarray
    kind_code: np.ndarray

    def __len__(self) -> int:
        return len(self.station_code)

    def counts_by_station(self, kind: str) -> np.ndarray:
        """Total events of one kind per station code."""
        mask = self.kind_code == (0 if kind == PICKUP else 1)
        return np.bincount(self.station_code[mask], minlength=len(self.stations))

    def iter_events(self) -> Iterator[Event]:
        kinds = (PICKUP, DROPOFF)
        for i in range(len(self)):
            day = date.fromordinal(int(self.date_ordinal[i]))
            secs = int(self.second_of_day[i])
            when = datetime(day.year, day.month, day.day, secs // 3600, secs % 3600 // 60, secs % 60)
            yield Event(self.stations[self.station_code[i]], when, kinds[self.kind_code[i]], day, day_type_of(day))

    @classmethod
    def from_events(cls, events: Iterable[Event], year: int, quarter: int) -> "EventTable":
        events = list(events)
        code: dict[str, int] = {}
        station = np.fromiter((code.setdefault(e.station, len(code)) for e in events), dtype=np.int32, count=len(events))
        ordinals = np.fromiter((e.time.toordinal() for e in events), dtype=np.int64, count=len(events))
        secs = np.fromiter(
            (e.time.hour * 3600 + e.time.minute * 60 + e.time.second for e in events),
            dtype=np.int32, count=len(events),
        )
        kind = np.fromiter((0 if e.kind == PICKUP else 1 for e in events), dtype=np.uint8, count=len(events))
        return cls(year, quarter, tuple(code), station, ordinals, secs, kind)


def partition_events(trips: Sequence[TripRecord]) -> dict[tuple[int, int], EventTable]:
    """Expand trips into events grouped by (year, quarter).

    Quarter membership follows the trip's start date; the dropoff event of a
    boundary-spanning trip stays with the start quarter so pickup and dropoff
    totals stay conserved within each table.
    """
    n = len(trips)
    if n == 0:
        return {}
    code: dict[str, int] = {}
    start_code = np.fromiter((code.setdefault(t.start_station, len(code)) for t in trips), dtype=np.int32, count=n)
    end_code = np.fromiter((code.setdefault(t.end_station, len(code)) for t in trips), dtype=np.int32, count=n)
    stations = tuple(code)

    s64 = np.array([t.start_time for t in trips], dtype="datetime64[s]")
    e64 = np.array([t.end_time for t in trips], dtype="datetime64[s]")
    s_day = s64.astype("datetime64[D]")
    e_day = e64.astype("datetime64[D]")
    s_ord = s_day.astype("int64") + _EPOCH_ORDINAL
    e_ord = e_day.astype("int64") + _EPOCH_ORDINAL
    s_sec = (s64 - s_day).astype("int64").astype(np.int32)
    e_sec = (e64 - e_day).astype("int64").astype(np.int32)
    months = s64.astype("datetime64[M]").astype("int64")
    years = months // 12 + 1970
    quarters = months % 12 // 3 + 1

    tables: dict[tuple[int, int], EventTable] = {}
    for year, quarter in sorted({(int(y), int(q)) for y, q in zip(years, quarters)}):
        mask = (years == year) & (quarters == quarter)
        tables[(year, quarter)] = EventTable(
            year=year,
            quarter=quarter,
            stations=stations,
            station_code=np.concatenate([start_code[mask], end_code[mask]]),
            date_ordinal=np.concatenate([s_ord[mask], e_ord[mask]]),
            second_of_day=np.concatenate([s_sec[mask], e_sec[mask]]),
            kind_code=np.concatenate(
                [np.zeros(int(mask.sum()), dtype=np.uint8), np.ones(int(mask.sum()), dtype=np.uint8)]
            ),
        )
    return tables


def filter_low_activity_stations(
    events: EventTable | Iterable[Event],
    days_in_quarter: int,
    *,
    min_daily_avg: float = 5.0,
    stations: Iterable[str] | None = None,
) -> tuple[set[str], set[str]]:
    """Stations whose daily average activity falls below the threshold.

    The rule is strict less-than and is applied per dataset: a station can be
    excluded from the pickup analysis yet kept in the dropoff analysis.
    ``stations`` widens the universe beyond stations that appear in ``events``
    (a station with no events at all lands in both sets).
    """
    if days_in_quarter <= 0:
        raise ConfigError(f"days_in_quarter must be positive, got {days_in_quarter}")
    pickup_counts: dict[str, int] = {}
    dropoff_counts: dict[str, int] = {}
    if isinstance(events, EventTable):
        for kind, counts in ((PICKUP, pickup_counts), (DROPOFF, dropoff_counts)):
            per_code = events.counts_by_station(kind)
            for code_idx, c in enumerate(per_code):
                counts[events.stations[code_idx]] = int(c)
        universe = set(events.stations)
    else:
        universe = set()
        for e in events:
            universe.add(e.station)
            counts = pickup_counts if e.kind == PICKUP else dropoff_counts
            counts[e.station] = counts.get(e.station, 0) + 1
    if stations is not None:
        universe.update(stations)

    pickup_excluded = {s for s in universe if pickup_counts.get(s, 0) / days_in_quarter < min_daily_avg}
    dropoff_excluded = {s for s in universe if dropoff_counts.get(s, 0) / days_in_quarter < min_daily_avg}
    return pickup_excluded, dropoff_excluded


def _station_rows(source) -> list[StationInfo]:
    stream = _open_text(source)
    text = stream.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        doc = json.loads(text)
        if doc.get("type") != "FeatureCollection":
            raise ConfigError("station GeoJSON must be a FeatureCollection of points")
        out = []
        for feature in doc.get("features", []):
            geometry = feature.get("geometry") or {}
            if geometry.get("type") != "Point":
                raise ConfigError(f"station feature geometry must be Point, got {geometry.get('type')}")
            lon, lat = geometry["coordinates"][:2]
            props = feature.get("properties") or {}
            sid = props.get("id", feature.get("id"))
            if sid is None:
                raise ConfigError("station feature lacks an 'id' property")
            out.append(StationInfo(str(sid), str(props.get("name", "")), float(lat), float(lon)))
        return out

    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise ConfigError("station catalog is empty")
    lowered = [h.strip().lower() for h in header]
    aliases = {"id": ("id", "station_id"), "name": ("name", "station_name"),
               "lat": ("lat", "latitude"), "lon": ("lon", "lng", "longitude")}
    cols = {}
    for key, names in aliases.items():
        for name in names:
            if name in lowered:
                cols[key] = lowered.index(name)
                break
        else:
            raise ConfigError(f"station catalog header lacks a '{key}' column (have {header})")
    out = []
    for row_number, row in enumerate(reader, 2):
        if not row:
            continue
        try:
            out.append(
                StationInfo(row[cols["id"]], row[cols["name"]], float(row[cols["lat"]]), float(row[cols["lon"]]))
            )
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"station catalog row {row_number} is malformed: {exc}") from exc
    return out


def load_stations(source) -> dict[str, StationInfo]:
    """Load a station catalog from CSV (id,name,lat,lon) or point GeoJSON."""
    catalog: dict[str, StationInfo] = {}
    for info in _station_rows(source):
        if not -90.0 <= info.latitude <= 90.0 or not -180.0 <= info.longitude <= 180.0:
            raise ConfigError(
                f"station {info.id} has out-of-range coordinates ({info.latitude}, {info.longitude})"
            )
        if info.id in catalog:
            raise ConfigError(f"duplicate station id in catalog: {info.id}")
        catalog[info.id] = info
    return catalog
