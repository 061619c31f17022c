"""Bike-share station profiling, clustering and shortage/excess analysis."""

from .balance import (
    BalanceIndex,
    BalanceWindow,
    DayExtremes,
    adms_adme,
    balance_indices,
    categorize,
    day_extremes,
    self_balanced_fraction,
    standard_windows,
    window_extremes,
)
from .cluster import (
    ClusterModel,
    KSelection,
    OutlierReport,
    ValidityScores,
    adjusted_rand_index,
    davies_bouldin,
    detect_outlier_stations,
    dunn,
    kmeans,
    select_k,
    silhouette,
)
from .config import RunConfig, load_config, save_config
from .errors import (
    BikeBalanceError,
    ConfigError,
    ContractViolationError,
    NotDefinedForEmptyDayError,
    PipelineError,
    ValidityIndexError,
)
from .ingest import (
    CleaningReport,
    Event,
    EventTable,
    StationInfo,
    TripRecord,
    clean_trips,
    days_in_quarter,
    events_from_trip,
    filter_low_activity_stations,
    load_stations,
    parse_trips,
    partition_events,
    write_trips,
)
from .profiles import (
    DayVector,
    Excluded,
    NormalizedDayVector,
    StationProfile,
    bin_events,
    build_profiles,
    build_station_profile,
    feature_matrix,
    hourly_usage_summary,
    normalize_day,
)
from .report import QuarterSummary, export_balance_geojson, export_cluster_geojson, quarter_summary
from .synth import ArchetypeSpec, SynthTruth, example_archetypes, generate_shortage_script, generate_trips

__version__ = "0.1.0"
