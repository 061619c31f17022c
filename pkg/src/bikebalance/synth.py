"""Synthetic trip generation with planted temporal archetypes and known extremes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .ingest import DROPOFF, MEMBER, PICKUP, Event, TripRecord, day_type_of

logger = logging.getLogger(__name__)

N_BINS = 24
TRIP_DURATION_S = 300


@dataclass(frozen=True)
class ArchetypeSpec:
    """A planted temporal shape: hourly weights plus volume and noise knobs."""

    name: str
    weekday_shape: tuple[float, ...]
    weekend_shape: tuple[float, ...]
    daily_volume: float
    noise_scale: float = 0.0

    def __post_init__(self):
        for label, shape in (("weekday", self.weekday_shape), ("weekend", self.weekend_shape)):
            if len(shape) != N_BINS:
                raise ConfigError(f"archetype '{self.name}' {label} shape needs {N_BINS} weights")
            if any(w < 0 for w in shape):
                raise ConfigError(f"archetype '{self.name}' {label} shape has negative weights")
            if sum(shape) <= 0:
                raise ConfigError(f"archetype '{self.name}' {label} shape has no positive weight")
        if self.daily_volume <= 0:
            raise ConfigError(f"archetype '{self.name}' daily_volume must be positive")
        if self.noise_scale < 0:
            raise ConfigError(f"archetype '{self.name}' noise_scale must be non-negative")

    def shape_fractions(self, day_type_weekend: bool) -> np.ndarray:
        shape = np.asarray(self.weekend_shape if day_type_weekend else self.weekday_shape, dtype=float)
        return shape / shape.sum()

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "weekday_shape": list(self.weekday_shape),
            "weekend_shape": list(self.weekend_shape),
            "daily_volume": self.daily_volume,
            "noise_scale": self.noise_scale,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ArchetypeSpec":
        return cls(
            name=str(doc["name"]),
            weekday_shape=tuple(float(w) for w in doc["weekday_shape"]),
            weekend_shape=tuple(float(w) for w in doc["weekend_shape"]),
            daily_volume=float(doc["daily_volume"]),
            noise_scale=float(doc.get("noise_scale", 0.0)),
        )


@dataclass
class SynthTruth:
    """Ground truth emitted next to generated data."""

    archetype_by_station: dict[str, str]
    extremes: dict[tuple[str, str, str], tuple[int, int]] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "archetype_by_station": dict(sorted(self.archetype_by_station.items())),
            "extremes": {
                f"{station}|{day}|{window}": list(value)
                for (station, day, window), value in sorted(self.extremes.items())
            },
        }


def example_archetypes(daily_volume: float = 40.0, noise_scale: float = 0.1) -> list[ArchetypeSpec]:
    """Three well-separated shapes: morning-peaked, evening-peaked and bimodal."""
    morning = [0.0] * N_BINS
    for b, w in ((7, 3.0), (8, 8.0), (9, 10.0), (10, 5.0), (11, 2.0), (18, 1.0), (19, 1.0)):
        morning[b - 1] = w
    evening = [0.0] * N_BINS
    for b, w in ((8, 1.0), (9, 1.0), (17, 3.0), (18, 8.0), (19, 10.0), (20, 5.0), (21, 2.0)):
        evening[b - 1] = w
    bimodal = [0.0] * N_BINS
    for b, w in ((8, 5.0), (9, 6.0), (12, 1.0), (13, 1.0), (18, 6.0), (19, 5.0)):
        bimodal[b - 1] = w
    weekend = [0.0] * N_BINS
    for b in range(10, 21):
        weekend[b - 1] = 2.0 + (1.0 if 12 <= b <= 17 else 0.0)
    return [
        ArchetypeSpec("morning_peaked", tuple(morning), tuple(weekend), daily_volume, noise_scale),
        ArchetypeSpec("evening_peaked", tuple(evening), tuple(weekend), daily_volume, noise_scale),
        ArchetypeSpec("bimodal", tuple(bimodal), tuple(weekend), daily_volume, noise_scale),
    ]


def _date_list(dates: tuple[date, date] | Sequence[date]) -> list[date]:
    if isinstance(dates, tuple) and len(dates) == 2 and isinstance(dates[0], date):
        first, last = dates
        if last < first:
            raise ConfigError("date range end precedes start")
        return [first + timedelta(days=i) for i in range((last - first).days + 1)]
    out = list(dates)
    if not out:
        raise ConfigError("date range is empty")
    return out


def _bin_offsets(counts_flat: np.ndarray, rng: np.random.Generator | None) -> np.ndarray:
    """Offset into its hour bin for each event, given flattened per-bin counts.

    Offsets are in (0, 3600] so every event lands strictly inside the
    right-closed bin it was drawn for.
    """
    total = int(counts_flat.sum())
    if rng is not None:
        return rng.integers(1, 3601, size=total)
    # Deterministic spread: event j of c in a bin sits at (j+1)*3600/(c+1).
    starts = np.repeat(np.cumsum(counts_flat) - counts_flat, counts_flat)
    j = np.arange(total) - starts
    c = np.repeat(counts_flat, counts_flat)
    return (j + 1) * 3600 // (c + 1) + 1


def generate_trips(
    archetypes: Sequence[ArchetypeSpec],
    stations_per_archetype: int,
    dates: tuple[date, date] | Sequence[date],
    seed: int = 0,
) -> tuple[list[TripRecord], SynthTruth]:
    """Generate well-formed trips whose pickup profiles follow the archetypes.

    Per station-day, per-bin event counts follow the archetype shape scaled to
    its daily volume; with a positive noise scale each bin mean gets a
    multiplicative lognormal factor and counts are Poisson draws, while a zero
    noise scale produces fully deterministic counts and times. Each pickup is
    paired with a dropoff at the next station of the same archetype (ring
    order), 300 s later, so the trip-level cleaning rules keep everything.
    """
    if not archetypes:
        raise ConfigError("need at least one archetype")
    if stations_per_archetype < 1:
        raise ConfigError("stations_per_archetype must be >= 1")
    day_list = _date_list(dates)
    n_stations = len(archetypes) * stations_per_archetype
    if n_stations < 2:
        raise ConfigError("need at least two stations to form distinct-station trips")

    station_ids = [f"S{i:04d}" for i in range(n_stations)]
    archetype_of = {
        station_ids[a * stations_per_archetype + s]: archetypes[a].name
        for a in range(len(archetypes))
        for s in range(stations_per_archetype)
    }

    def partner(global_idx: int) -> str:
        if stations_per_archetype >= 2:
            a, s = divmod(global_idx, stations_per_archetype)
            return station_ids[a * stations_per_archetype + (s + 1) % stations_per_archetype]
        return station_ids[(global_idx + 1) % n_stations]

    weekend_flags = np.array([d.weekday() >= 5 for d in day_list])
    day_epochs = np.array([(d.toordinal() - 719163) * 86400 for d in day_list], dtype=np.int64)
    n_days = len(day_list)
    bin_of_slot = np.tile(np.arange(N_BINS), n_days)
    day_of_slot = np.repeat(np.arange(n_days), N_BINS)

    bike_ids = [f"B{i:04d}" for i in range(4000)]
    trips: list[TripRecord] = []
    counter = 0
    for gi, sid in enumerate(station_ids):
        spec = archetypes[gi // stations_per_archetype]
        rng = np.random.default_rng([seed, gi]) if spec.noise_scale > 0 else None
        dest = partner(gi)
        lam = np.where(
            weekend_flags[:, None],
            spec.shape_fractions(True)[None, :],
            spec.shape_fractions(False)[None, :],
        ) * spec.daily_volume
        if rng is None:
            counts = np.floor(lam + 0.5).astype(np.int64)
        else:
            factors = np.exp(spec.noise_scale * rng.standard_normal((n_days, N_BINS)))
            counts = rng.poisson(lam * factors)
        counts_flat = counts.reshape(-1)
        total = int(counts_flat.sum())
        if total == 0:
            continue
        offsets = _bin_offsets(counts_flat, rng)
        secs = np.repeat(bin_of_slot, counts_flat) * 3600 + offsets
        epochs = day_epochs[np.repeat(day_of_slot, counts_flat)] + secs
        starts = epochs.astype("datetime64[s]").astype(object)
        ends = (epochs + TRIP_DURATION_S).astype("datetime64[s]").astype(object)
        for start, end in zip(starts, ends):
            counter += 1
            trips.append(
                TripRecord(
                    trip_id=f"synth-{counter:08d}",
                    start_time=start,
                    end_time=end,
                    duration=TRIP_DURATION_S,
                    start_station=sid,
                    end_station=dest,
                    bike_id=bike_ids[counter % 4000],
                    member_type=MEMBER,
                )
            )
    logger.info("generated %d trips for %d stations over %d days", len(trips), n_stations, len(day_list))
    return trips, SynthTruth(archetype_of)


def _script_events(station: str, day: date, deltas: Sequence[int]) -> list[Event]:
    base = datetime.combine(day, time(8, 0, 0))
    events = []
    for i, delta in enumerate(deltas):
        when = base + timedelta(seconds=60 * i)
        kind = PICKUP if delta > 0 else DROPOFF
        events.append(Event(station, when, kind, day, day_type_of(day)))
    return events


def generate_shortage_script(
    pattern: str | Sequence,
    station: str,
    day: date,
    *,
    n: int = 20,
) -> tuple[list[Event], tuple[int, int]]:
    """Event scripts with known shortage/excess extremes.

    ``pattern`` is ``"alternating"`` (pickup, dropoff, ... for ``n`` events),
    ``"block"`` (``n`` pickups then ``n`` dropoffs) or an explicit sequence of
    +1/-1 (or '+'/'-') steps whose extremes get computed by a prefix-sum scan.
    Returns the events sorted by time along with (max_shortage, max_excess).
    """
    if pattern == "alternating":
        if n < 1:
            raise ConfigError("alternating pattern needs n >= 1")
        deltas = [1 if i % 2 == 0 else -1 for i in range(n)]
        truth = (1, 0)
    elif pattern == "block":
        if n < 1:
            raise ConfigError("block pattern needs n >= 1")
        deltas = [1] * n + [-1] * n
        truth = (n, 0)
    elif isinstance(pattern, str):
        raise ConfigError(f"unknown pattern '{pattern}'")
    else:
        deltas = [1 if step in (1, "+", "pickup") else -1 for step in pattern]
        prefix = 0
        high = 0
        low = 0
        for d in deltas:
            prefix += d
            high = max(high, prefix)
            low = min(low, prefix)
        truth = (max(0, high), max(0, -low))
    return _script_events(station, day, deltas), truth
