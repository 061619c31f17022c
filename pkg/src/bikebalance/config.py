"""Run configuration: defaults, JSON round-trip and provenance for --explain."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .balance import BalanceWindow, standard_windows
from .errors import ConfigError
from .ingest import DEFAULT_COLUMN_MAP, DEFAULT_TIMESTAMP_FORMAT

OUTPUT_DIR_ENV = "BIKEBALANCE_OUTPUT_DIR"

# Where each default comes from, printed by --explain.
PROVENANCE = {
    "trips_path": "input: trip CSV path",
    "stations_path": "input: station catalog (CSV or point GeoJSON)",
    "output_dir": f"artifact destination (env {OUTPUT_DIR_ENV} overrides)",
    "column_map": "source schema: seven trip fields, 2015 Capital Bikeshare header",
    "delimiter": "source schema: field delimiter",
    "timestamp_format": "source schema: timestamp layout",
    "year": "quarter selection",
    "quarter": "quarter selection (1..4, Q1 = Jan-Mar)",
    "min_duration_s": "cleaning rule: drop trips shorter than 60 s",
    "same_station_min_s": "cleaning rule: drop same-station trips shorter than 120 s",
    "min_daily_avg": "cleaning rule: drop stations averaging fewer than 5 daily events",
    "k_range": "cluster count search range (artifact default)",
    "seed": "RNG seed for reproducible clustering and synthesis",
    "restarts": "k-means restarts (artifact default)",
    "threads": "parallelism cap; outputs are identical for any value",
    "probe_k": "outlier-pass cluster count; None = midpoint of k_range",
    "outlier_min_cluster_fraction": "outlier rule: tiny-cluster share threshold",
    "outlier_distance_percentile": "outlier rule: nearest-centroid distance percentile",
    "windows": "analysis windows: full day, morning, afternoon, midday peaks",
    "category_bin_width": "imbalance categories: right-closed width-5 bins",
    "self_balanced_threshold": "self-balanced rule: both indices at or below 5",
}


@dataclass
class RunConfig:
    """Everything a pipeline run needs, round-trippable through JSON."""

    trips_path: str | None = None
    stations_path: str | None = None
    output_dir: str = "out"
    column_map: dict = field(default_factory=lambda: dict(DEFAULT_COLUMN_MAP))
    delimiter: str = ","
    timestamp_format: str = DEFAULT_TIMESTAMP_FORMAT
    year: int | None = None
    quarter: int | None = None
    min_duration_s: int = 60
    same_station_min_s: int = 120
    min_daily_avg: float = 5.0
    k_range: tuple[int, int] = (2, 10)
    seed: int = 2015
    restarts: int = 25
    threads: int = 1
    probe_k: int | None = None
    outlier_min_cluster_fraction: float = 0.01
    outlier_distance_percentile: float = 95.0
    windows: list[BalanceWindow] = field(default_factory=standard_windows)
    category_bin_width: float = 5.0
    self_balanced_threshold: float = 5.0

    def validate(self) -> None:
        if self.min_duration_s <= 0 or self.same_station_min_s <= 0 or self.min_daily_avg <= 0:
            raise ConfigError("cleaning thresholds must be positive")
        lo, hi = self.k_range
        if not (isinstance(lo, int) and isinstance(hi, int) and 2 <= lo <= hi):
            raise ConfigError(f"k_range must satisfy 2 <= lo <= hi, got {self.k_range}")
        if self.quarter is not None and self.quarter not in (1, 2, 3, 4):
            raise ConfigError(f"quarter must be 1..4, got {self.quarter}")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.category_bin_width <= 0 or self.self_balanced_threshold <= 0:
            raise ConfigError("category bin width and self-balanced threshold must be positive")
        if not self.windows:
            raise ConfigError("at least one analysis window is required")
        labels = [w.label for w in self.windows]
        if len(set(labels)) != len(labels):
            raise ConfigError("window labels must be unique")

    @property
    def effective_probe_k(self) -> int:
        if self.probe_k is not None:
            return self.probe_k
        lo, hi = self.k_range
        return (lo + hi) // 2

    def to_dict(self) -> dict:
        doc = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "windows":
                value = [w.to_dict() for w in value]
            elif f.name == "k_range":
                value = list(value)
            doc[f.name] = value
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "windows" in kwargs:
            kwargs["windows"] = [BalanceWindow.from_dict(w) for w in kwargs["windows"]]
        if "k_range" in kwargs:
            kwargs["k_range"] = tuple(kwargs["k_range"])
        return cls(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(doc)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def resolve_config(
    file_config: RunConfig | None,
    overrides: dict,
) -> tuple[RunConfig, dict[str, str]]:
    """Layer defaults, config file, CLI flags and the environment.

    Returns the resolved config plus a provenance map naming where each value
    came from.
    """
    config = RunConfig()
    sources = {f.name: "default" for f in fields(RunConfig)}
    if file_config is not None:
        defaults = RunConfig()
        for f in fields(RunConfig):
            file_value = getattr(file_config, f.name)
            if file_value != getattr(defaults, f.name):
                sources[f.name] = "config file"
        config = file_config
    for key, value in overrides.items():
        if value is None:
            continue
        config = replace(config, **{key: value})
        sources[key] = "command line"
    env_out = os.environ.get(OUTPUT_DIR_ENV)
    if env_out:
        config = replace(config, output_dir=env_out)
        sources["output_dir"] = f"environment ({OUTPUT_DIR_ENV})"
    config.validate()
    return config, sources


def explain(config: RunConfig, sources: dict[str, str]) -> str:
    """Human-readable dump of the resolved configuration with provenance."""
    lines = ["resolved configuration:"]
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if f.name == "windows":
            value = ", ".join(f"{w.label} {w.start.isoformat()}-{w.end.isoformat()}" for w in value)
        note = PROVENANCE.get(f.name, "")
        lines.append(f"  {f.name} = {value!r}  [{sources.get(f.name, 'default')}] {note}")
    return "\n".join(lines)
