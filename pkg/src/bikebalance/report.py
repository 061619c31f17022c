"""Map-ready and tabular exports: GeoJSON, CSV and JSON summaries."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .balance import BalanceIndex
from .cluster import ClusterModel
from .errors import ConfigError
from .ingest import StationInfo, TripRecord

logger = logging.getLogger(__name__)

EXPORT_DECIMALS = 6

# Fixed categorical palette for cluster maps, keyed by cluster index mod 8.
CLUSTER_PALETTE: tuple[tuple[str, str], ...] = (
    ("yellow", "#e6c700"),
    ("brown", "#8b5a2b"),
    ("green", "#2e8b57"),
    ("pink", "#ff69b4"),
    ("blue", "#1f4fd8"),
    ("lightblue", "#7ec8e3"),
    ("orange", "#e87a00"),
    ("purple", "#7d3cb5"),
)

# Fixed palette for the eight imbalance categories; category 1 is the
# near-invisible cyan used for self-balanced stations.
CATEGORY_PALETTE: tuple[tuple[str, str], ...] = (
    ("cyan", "#00ffff"),
    ("green", "#2e8b57"),
    ("yellow", "#e6c700"),
    ("orange", "#e87a00"),
    ("black", "#000000"),
    ("purple", "#7d3cb5"),
    ("red", "#d62728"),
    ("darkred", "#7f0000"),
)

BALANCE_MODES = ("adme_only", "adms_only", "combined")

BALANCE_CSV_FIELDS = (
    "station_id",
    "window",
    "adms",
    "adme",
    "cat_adms",
    "cat_adme",
    "cat_combined",
    "self_balanced",
    "adms_plus_adme",
)


@dataclass(frozen=True)
class QuarterSummary:
    """Counts and mean duration for one quarter of trips."""

    year: int
    quarter: int
    trip_count_raw: int
    trip_count_clean: int
    station_count: int
    mean_duration_minutes: float | None

    def to_json_dict(self) -> dict:
        rounded = None if self.mean_duration_minutes is None else round(self.mean_duration_minutes)
        return {
            "schema_version": 1,
            "year": self.year,
            "quarter": self.quarter,
            "trip_count_raw": self.trip_count_raw,
            "trip_count_clean": self.trip_count_clean,
            "station_count": self.station_count,
            "mean_duration_minutes": rounded,
            "mean_duration_minutes_exact": self.mean_duration_minutes,
        }


def quarter_summary(
    year: int,
    quarter: int,
    raw_trips: Sequence[TripRecord],
    clean_trips: Sequence[TripRecord],
) -> QuarterSummary:
    """Summarize one quarter: raw/clean counts, distinct stations, mean duration.

    Station count covers every station appearing in the raw trips; the mean
    duration is over cleaned trips, in minutes, and None for an empty quarter.
    """
    stations = {t.start_station for t in raw_trips} | {t.end_station for t in raw_trips}
    if clean_trips:
        mean_minutes = sum(t.duration for t in clean_trips) / len(clean_trips) / 60.0
    else:
        mean_minutes = None
    return QuarterSummary(
        year=year,
        quarter=quarter,
        trip_count_raw=len(raw_trips),
        trip_count_clean=len(clean_trips),
        station_count=len(stations),
        mean_duration_minutes=mean_minutes,
    )


def _round6(value):
    if isinstance(value, float):
        return round(value, EXPORT_DECIMALS)
    if isinstance(value, (np.floating,)):
        return round(float(value), EXPORT_DECIMALS)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, dict):
        return {k: _round6(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round6(v) for v in value]
    return value


def write_json(path: str | Path, doc) -> None:
    """Write JSON deterministically: sorted keys, floats at 6 decimal places."""
    with Path(path).open("w", encoding="utf-8") as stream:
        json.dump(_round6(doc), stream, indent=2, sort_keys=True)
        stream.write("\n")


def write_csv(path: str | Path, fieldnames: Sequence[str], rows: Iterable[Mapping]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as stream:
        writer = csv.DictWriter(stream, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format_cell(v) for k, v in row.items()})


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.{EXPORT_DECIMALS}f}"
    return str(value)


def _point_feature(info: StationInfo, properties: dict) -> dict:
    return {
        "type": "Feature",
        "id": info.id,
        "geometry": {
            "type": "Point",
            "coordinates": [round(info.longitude, EXPORT_DECIMALS), round(info.latitude, EXPORT_DECIMALS)],
        },
        "properties": properties,
    }


def export_cluster_geojson(
    stations: Mapping[str, StationInfo],
    model: ClusterModel,
) -> tuple[dict, list[str]]:
    """One point feature per assigned station, colored by cluster.

    Stations without coordinates are left out of the collection and returned
    as the skipped-station diagnostic. Feature order is by station id.
    """
    if not model.assignment:
        raise ConfigError("cannot export an empty cluster model")
    features = []
    skipped = []
    for sid in sorted(model.assignment):
        info = stations.get(sid)
        if info is None:
            skipped.append(sid)
            continue
        cluster = model.assignment[sid]
        color_name, color_hex = CLUSTER_PALETTE[cluster % len(CLUSTER_PALETTE)]
        features.append(
            _point_feature(
                info,
                {
                    "station_id": sid,
                    "name": info.name,
                    "cluster": cluster,
                    "color": color_name,
                    "marker-color": color_hex,
                },
            )
        )
    if skipped:
        logger.warning("skipped %d stations without coordinates", len(skipped))
    return {"type": "FeatureCollection", "features": features}, skipped


def export_balance_geojson(
    stations: Mapping[str, StationInfo],
    indices: Iterable[BalanceIndex],
    mode: str,
) -> tuple[dict, list[str]]:
    """One point feature per station, colored by its imbalance category.

    ``mode`` selects the category: only the excess index, only the shortage
    index, or the combined one; in combined mode self-balanced stations carry
    the low-visibility cyan token.
    """
    if mode not in BALANCE_MODES:
        raise ConfigError(f"unknown balance export mode '{mode}' (expected one of {BALANCE_MODES})")
    features = []
    skipped = []
    for ix in sorted(indices, key=lambda ix: ix.station):
        info = stations.get(ix.station)
        if info is None:
            skipped.append(ix.station)
            continue
        if mode == "adme_only":
            category = ix.category_by_adme
        elif mode == "adms_only":
            category = ix.category_by_adms
        else:
            category = ix.category_combined
        color_name, color_hex = CATEGORY_PALETTE[category - 1]
        features.append(
            _point_feature(
                info,
                {
                    "station_id": ix.station,
                    "name": info.name,
                    "window": ix.window,
                    "mode": mode,
                    "adms": round(ix.adms, EXPORT_DECIMALS),
                    "adme": round(ix.adme, EXPORT_DECIMALS),
                    "adms_plus_adme": round(ix.adms + ix.adme, EXPORT_DECIMALS),
                    "category": category,
                    "color": color_name,
                    "marker-color": color_hex,
                    "self_balanced": ix.self_balanced,
                },
            )
        )
    return {"type": "FeatureCollection", "features": features}, skipped


def balance_indices_rows(indices: Iterable[BalanceIndex]) -> list[dict]:
    rows = []
    for ix in sorted(indices, key=lambda ix: (ix.window, ix.station)):
        rows.append(
            {
                "station_id": ix.station,
                "window": ix.window,
                "adms": ix.adms,
                "adme": ix.adme,
                "cat_adms": ix.category_by_adms,
                "cat_adme": ix.category_by_adme,
                "cat_combined": ix.category_combined,
                "self_balanced": ix.self_balanced,
                "adms_plus_adme": ix.adms + ix.adme,
            }
        )
    return rows


CENTER_CSV_FIELDS = ("cluster", "day_type", "hour", "percent")
SIZE_CSV_FIELDS = ("cluster", "size")


def export_center_profiles(model: ClusterModel) -> tuple[list[dict], list[dict]]:
    """Cluster-center hourly percentages plus cluster sizes.

    One row per (cluster, day type, hour) with the centroid component as a
    percentage; centroid halves are means of unit-sum profiles, so each
    (cluster, day type) group sums to 100.
    """
    center_rows = []
    for c in range(model.k):
        for day_type, offset in (("weekday", 0), ("weekend", 24)):
            for hour in range(1, 25):
                center_rows.append(
                    {
                        "cluster": c,
                        "day_type": day_type,
                        "hour": hour,
                        "percent": float(model.centroids[c, offset + hour - 1]) * 100.0,
                    }
                )
    size_rows = [{"cluster": c, "size": size} for c, size in enumerate(model.cluster_sizes())]
    return center_rows, size_rows


def centers_as_profile_rows(model: ClusterModel) -> list[dict]:
    """Cluster centers in the station-profile CSV layout (one row per center)."""
    rows = []
    for c in range(model.k):
        row = {"station_id": f"cluster-{c}", "kind": "center"}
        for b in range(24):
            row[f"wd_h{b + 1}"] = f"{model.centroids[c, b]:.6f}"
            row[f"we_h{b + 1}"] = f"{model.centroids[c, 24 + b]:.6f}"
        rows.append(row)
    return rows
