"""Command-line surface: summarize, cluster, balance and synth subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

from . import balance as balance_mod
from . import cluster as cluster_mod
from . import profiles as profiles_mod
from . import report as report_mod
from . import synth as synth_mod
from .config import OUTPUT_DIR_ENV, RunConfig, explain, load_config, resolve_config
from .errors import BikeBalanceError, ConfigError, PipelineError
from .ingest import (
    DROPOFF,
    PICKUP,
    CleaningReport,
    EventTable,
    clean_trips,
    days_in_quarter,
    filter_low_activity_stations,
    load_stations,
    parse_trips,
    partition_events,
    quarter_of,
    write_trips,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PIPELINE = 1
EXIT_CONFIG = 2

DOW_LABELS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")


def _ingest(config: RunConfig):
    """Parse, clean and partition the configured trip file."""
    if not config.trips_path:
        raise ConfigError("no trip file configured (set trips_path or pass --trips)")
    parse_result = parse_trips(
        config.trips_path,
        config.column_map,
        delimiter=config.delimiter,
        timestamp_format=config.timestamp_format,
    )
    kept, clean_report = clean_trips(
        parse_result.trips,
        min_duration_s=config.min_duration_s,
        same_station_min_s=config.same_station_min_s,
    )
    # Fold row-level parse failures into the run's cleaning report so nothing
    # disappears without a trace.
    report = CleaningReport(
        input_count=parse_result.row_count,
        kept_count=clean_report.kept_count,
        removed=[(f"row-{d.row}", "parse_error") for d in parse_result.excluded_rows] + clean_report.removed,
    )
    logger.info(
        "ingest: %d rows -> %d parsed, %d kept after cleaning",
        parse_result.row_count, len(parse_result.trips), len(kept),
    )
    tables = partition_events(kept)
    return parse_result, kept, report, tables


def _select_table(tables: dict[tuple[int, int], EventTable], config: RunConfig) -> EventTable:
    if not tables:
        raise PipelineError("no events survived ingest; nothing to analyze")
    keys = sorted(tables)
    if config.quarter is None and len(keys) > 1:
        raise ConfigError(f"data spans quarters {keys}; pick one with --quarter/--year")
    candidates = [
        key for key in keys
        if (config.quarter is None or key[1] == config.quarter)
        and (config.year is None or key[0] == config.year)
    ]
    if not candidates:
        raise ConfigError(f"no events in quarter {config.quarter} (have {keys})")
    if len(candidates) > 1:
        raise ConfigError(f"quarter {config.quarter} appears in several years {candidates}; pass --year")
    return tables[candidates[0]]


def _load_catalog(config: RunConfig):
    if not config.stations_path:
        return None
    return load_stations(config.stations_path)


def _tag(table: EventTable) -> str:
    return f"{table.year}q{table.quarter}"


def run_summarize(config: RunConfig) -> int:
    parse_result, kept, _, tables = _ingest(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    raw_by_quarter: dict[tuple[int, int], list] = {}
    for t in parse_result.trips:
        d = t.start_time.date()
        raw_by_quarter.setdefault((d.year, quarter_of(d)), []).append(t)
    clean_by_quarter: dict[tuple[int, int], list] = {}
    for t in kept:
        d = t.start_time.date()
        clean_by_quarter.setdefault((d.year, quarter_of(d)), []).append(t)

    for (year, quarter), raw in sorted(raw_by_quarter.items()):
        summary = report_mod.quarter_summary(year, quarter, raw, clean_by_quarter.get((year, quarter), []))
        report_mod.write_json(out / f"summary_{year}q{quarter}.json", summary.to_json_dict())
        logger.info(
            "quarter %dq%d: %d raw, %d clean, %d stations",
            year, quarter, summary.trip_count_raw, summary.trip_count_clean, summary.station_count,
        )
        table = tables.get((year, quarter))
        if table is None:
            continue
        matrices = profiles_mod.hourly_usage_summary(table)
        for kind, matrix in matrices.items():
            rows = []
            for d in range(7):
                row = {"day_of_week": DOW_LABELS[d]}
                row.update({f"h{b + 1}": matrix[d, b] for b in range(24)})
                rows.append(row)
            fieldnames = ["day_of_week"] + [f"h{b}" for b in range(1, 25)]
            report_mod.write_csv(out / f"hourly_usage_{year}q{quarter}_{kind}.csv", fieldnames, rows)
    return EXIT_OK


def run_cluster(config: RunConfig, kind: str) -> int:
    if kind not in (PICKUP, DROPOFF):
        raise ConfigError(f"kind must be {PICKUP} or {DROPOFF}, got '{kind}'")
    _, _, cleaning_report, tables = _ingest(config)
    table = _select_table(tables, config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = _tag(table)

    n_days = days_in_quarter(table.year, table.quarter)
    pickup_excluded, dropoff_excluded = filter_low_activity_stations(
        table, n_days, min_daily_avg=config.min_daily_avg
    )
    cleaning_report.excluded_stations_pickup = pickup_excluded
    cleaning_report.excluded_stations_dropoff = dropoff_excluded
    report_mod.write_json(out / f"cluster_{tag}_{kind}_cleaning.json", cleaning_report.to_json_dict())
    excluded_for_kind = pickup_excluded if kind == PICKUP else dropoff_excluded
    logger.info("low-activity exclusions: %d pickup, %d dropoff", len(pickup_excluded), len(dropoff_excluded))

    station_profiles, excluded = profiles_mod.build_profiles(table, kind, exclude=excluded_for_kind)
    logger.info("profiles: %d stations profiled, %d excluded", len(station_profiles), len(excluded))
    profiles_mod.write_profiles_csv(station_profiles, out / f"cluster_{tag}_{kind}_profiles.csv")
    features = profiles_mod.feature_matrix(station_profiles)

    lo, hi = config.k_range
    probe_k = config.effective_probe_k
    if len(features) >= probe_k + 2:
        outliers = cluster_mod.detect_outlier_stations(
            features,
            probe_k,
            seed=config.seed,
            restarts=config.restarts,
            min_cluster_fraction=config.outlier_min_cluster_fraction,
            distance_percentile=config.outlier_distance_percentile,
        )
        for sid in outliers.removed_stations:
            del features[sid]
        outlier_doc = outliers.to_json_dict()
        logger.info("outlier pass: removed %d stations", len(outliers.removed_stations))
    else:
        outlier_doc = {"schema_version": 1, "skipped": True,
                       "reason": f"needs at least probe_k + 2 = {probe_k + 2} stations, have {len(features)}"}
        logger.warning("outlier pass skipped: only %d stations", len(features))
    report_mod.write_json(out / f"cluster_{tag}_{kind}_outliers.json", outlier_doc)

    n = len(features)
    if n < lo + 1:
        raise PipelineError(f"only {n} eligible stations for k_range [{lo}, {hi}]; need at least {lo + 1}")
    if hi > n - 1:
        logger.warning("clamping k_range upper bound from %d to %d (stations: %d)", hi, n - 1, n)
        hi = n - 1
    selection = cluster_mod.select_k(
        features, (lo, hi), seed=config.seed, restarts=config.restarts, threads=config.threads
    )
    logger.info("selected k=%d over [%d, %d]", selection.chosen_k, lo, hi)
    model = cluster_mod.kmeans(
        features, selection.chosen_k, seed=config.seed, restarts=config.restarts, threads=config.threads
    )

    report_mod.write_json(out / f"cluster_{tag}_{kind}_model.json", model.to_json_dict(selection.scores))
    center_rows, size_rows = report_mod.export_center_profiles(model)
    report_mod.write_csv(out / f"cluster_{tag}_{kind}_centers.csv", report_mod.CENTER_CSV_FIELDS, center_rows)
    report_mod.write_csv(out / f"cluster_{tag}_{kind}_sizes.csv", report_mod.SIZE_CSV_FIELDS, size_rows)
    report_mod.write_csv(
        out / f"cluster_{tag}_{kind}_centers_wide.csv",
        profiles_mod.PROFILE_CSV_FIELDS,
        report_mod.centers_as_profile_rows(model),
    )

    catalog = _load_catalog(config)
    if catalog is not None:
        collection, skipped = report_mod.export_cluster_geojson(catalog, model)
        report_mod.write_json(out / f"cluster_{tag}_{kind}_stations.geojson", collection)
        if skipped:
            report_mod.write_json(out / f"cluster_{tag}_{kind}_skipped.json", {"skipped_stations": skipped})
    else:
        logger.warning("no station catalog configured; skipping GeoJSON export")
    return EXIT_OK


def run_balance(config: RunConfig) -> int:
    _, _, cleaning_report, tables = _ingest(config)
    table = _select_table(tables, config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = _tag(table)
    n_days = days_in_quarter(table.year, table.quarter)
    catalog = _load_catalog(config)

    fractions = {}
    for window in config.windows:
        indices = balance_mod.balance_indices(
            table,
            window,
            n_days=n_days,
            bin_width=config.category_bin_width,
            self_balanced_threshold=config.self_balanced_threshold,
        )
        fractions[window.label] = balance_mod.self_balanced_fraction(indices)
        rows = report_mod.balance_indices_rows(indices)
        report_mod.write_csv(out / f"balance_{tag}_{window.label}_indices.csv", report_mod.BALANCE_CSV_FIELDS, rows)
        report_mod.write_json(
            out / f"balance_{tag}_{window.label}_indices.json",
            {"schema_version": 1, "window": window.to_dict(), "indices": rows},
        )
        if catalog is not None:
            for mode in report_mod.BALANCE_MODES:
                collection, _ = report_mod.export_balance_geojson(catalog, indices, mode)
                report_mod.write_json(out / f"balance_{tag}_{window.label}_{mode}.geojson", collection)
        logger.info(
            "window %s: %d stations, self-balanced fraction %.3f",
            window.label, len(indices), fractions[window.label],
        )
    if catalog is None:
        logger.warning("no station catalog configured; skipping GeoJSON exports")

    report_mod.write_json(
        out / f"balance_{tag}_fractions.json",
        {"schema_version": 1, "n_days": n_days, "self_balanced_fraction": fractions},
    )
    return EXIT_OK


def run_synth(config: RunConfig, args) -> int:
    spec_path = Path(args.archetypes)
    if not spec_path.exists():
        raise ConfigError(f"archetype spec file not found: {spec_path}")
    try:
        doc = json.loads(spec_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"archetype spec {spec_path} is not valid JSON: {exc}") from exc
    if isinstance(doc, dict):
        doc = doc.get("archetypes", [])
    archetypes = [synth_mod.ArchetypeSpec.from_dict(item) for item in doc]
    if not archetypes:
        raise ConfigError(f"archetype spec {spec_path} names no archetypes")

    try:
        first = date.fromisoformat(args.start_date)
        last = date.fromisoformat(args.end_date)
    except ValueError as exc:
        raise ConfigError(f"bad date: {exc}") from exc

    trips, truth = synth_mod.generate_trips(
        archetypes, args.stations_per_archetype, (first, last), seed=config.seed
    )
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    trips_path = Path(args.trips_out) if args.trips_out else out / "synth_trips.csv"
    truth_path = Path(args.truth_out) if args.truth_out else out / "synth_truth.json"
    write_trips(
        trips, trips_path, config.column_map,
        delimiter=config.delimiter, timestamp_format=config.timestamp_format,
    )
    report_mod.write_json(truth_path, truth.to_json_dict())
    logger.info("wrote %d trips to %s and truth to %s", len(trips), trips_path, truth_path)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bikebalance",
        description="Cluster bike-share stations by temporal profile and score their "
                    "shortage/excess balance over configurable windows.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--trips", help="trip CSV path")
        p.add_argument("--stations", help="station catalog (CSV or point GeoJSON)")
        p.add_argument("--out", help=f"output directory (env {OUTPUT_DIR_ENV} overrides)")
        p.add_argument("--quarter", type=int, help="calendar quarter 1..4 to analyze")
        p.add_argument("--year", type=int, help="calendar year of the quarter")
        p.add_argument("--seed", type=int, help="RNG seed")
        p.add_argument("--restarts", type=int, help="k-means restarts")
        p.add_argument("--threads", type=int, help="parallelism cap (results identical for any value)")
        p.add_argument("--k-min", type=int, help="lowest cluster count to try")
        p.add_argument("--k-max", type=int, help="highest cluster count to try")
        p.add_argument("--explain", action="store_true", help="print the resolved config and exit")

    p_sum = sub.add_parser("summarize", help="per-quarter counts and hourly usage matrices")
    common(p_sum)

    p_clu = sub.add_parser("cluster", help="profile, de-outlier and cluster stations")
    common(p_clu)
    p_clu.add_argument("--kind", choices=[PICKUP, DROPOFF], required=True, help="event stream to cluster")

    p_bal = sub.add_parser("balance", help="shortage/excess indices per window")
    common(p_bal)

    p_syn = sub.add_parser("synth", help="generate synthetic trips with planted structure")
    common(p_syn)
    p_syn.add_argument("--archetypes", required=True, help="JSON archetype spec file")
    p_syn.add_argument("--stations-per-archetype", type=int, default=30)
    p_syn.add_argument("--start-date", required=True, help="first date, YYYY-MM-DD")
    p_syn.add_argument("--end-date", required=True, help="last date, YYYY-MM-DD")
    p_syn.add_argument("--trips-out", help="trip CSV destination (default <out>/synth_trips.csv)")
    p_syn.add_argument("--truth-out", help="truth JSON destination (default <out>/synth_truth.json)")
    return parser


def _config_from_args(args) -> tuple[RunConfig, dict[str, str]]:
    file_config = load_config(args.config) if args.config else None
    overrides = {
        "trips_path": args.trips,
        "stations_path": args.stations,
        "output_dir": args.out,
        "quarter": args.quarter,
        "year": args.year,
        "seed": args.seed,
        "restarts": args.restarts,
        "threads": args.threads,
    }
    if args.k_min is not None or args.k_max is not None:
        base = file_config.k_range if file_config else RunConfig().k_range
        overrides["k_range"] = (
            args.k_min if args.k_min is not None else base[0],
            args.k_max if args.k_max is not None else base[1],
        )
    return resolve_config(file_config, overrides)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config, sources = _config_from_args(args)
        if args.explain:
            print(explain(config, sources))
            return EXIT_OK
        if args.command == "summarize":
            return run_summarize(config)
        if args.command == "cluster":
            return run_cluster(config, args.kind)
        if args.command == "balance":
            return run_balance(config)
        if args.command == "synth":
            return run_synth(config, args)
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BikeBalanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    raise SystemExit(main())
