# elasticdb/config/__init__.py
"""
Loads settings.yaml into typed Pydantic models.
Import anywhere: from elasticdb.config import settings

What it does:
  - `settings.cluster` is the desk profile ClusterConfig; `cluster_config("full")`
    overlays the full-scale profile from the same YAML.
  - `load_config_file()` overlays a flat key=value file (the format the
    bench CLI accepts with --config).
  - `validate_config()` reports every broken field at once.
  - `configure_logging()` wires the `elasticdb.*` loggers.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, ValidationError

from elasticdb.core.errors import ConfigError

_CONFIG_PATH = Path(__file__).parent / "settings.yaml"


class ClusterConfig(BaseModel):
    # topology / sizes
    node_count: int = 10
    page_size: int = 4096
    pages_per_segment: int = 64
    record_size: int = 100
    vector_size: int = 1024
    cpu_cores: int = 2
    buffer_pages: int = 1024
    disks_per_node: int = 1
    disk_capacity_segments: int = 4096
    initial_partitions_per_table: int = 2

    # network
    net_base_latency: float = 0.0001
    net_bandwidth: float = 125_000_000.0

    # disk
    disk_service_time: float = 0.0004
    disk_iops_cap: float = 2500.0

    # cpu cost model (seconds)
    cpu_per_op: float = 0.001
    cpu_per_message: float = 0.00015
    cpu_per_byte: float = 1e-8
    cpu_per_record_scan: float = 2e-5
    cpu_per_record_project: float = 4e-6
    cpu_per_record_serialize: float = 5e-6
    cpu_per_sort_unit: float = 2e-7
    cpu_per_record_move: float = 2e-4
    lock_cpu: float = 2e-5
    sort_memory_records: int = 40_000

    # controller / monitoring
    cpu_upper_threshold: float = 0.8
    cpu_lower_threshold: float = 0.3
    monitor_interval: float = 2.0
    confirm_intervals: int = 3
    iops_band_low: float = 0.2
    iops_band_high: float = 0.8
    boot_delay: float = 5.0

    # concurrency / movement
    cc_engine: str = "mvcc"
    logical_batch_size: int = 100
    gc_chain_threshold: int = 4
    prefetch_depth: int = 1
    wal_record_bytes: int = 64
    remote_buffer_latency: float = 1e-5

    # power curve (watts)
    p_idle: float = 22.0
    p_max: float = 26.0
    p_standby: float = 2.5
    p_switch: float = 20.0

    rng_seed: int = 42

    @property
    def segment_size(self) -> int:
        return self.page_size * self.pages_per_segment


class BenchConfig(BaseModel):
    warehouses: int = 4
    desk_divisor: int = 10
    start_nodes: int = 2
    target_nodes: int = 2
    clients: int = 50
    think_time: float = 0.05
    warmup: float = 8.0
    pre_window: float = 10.0
    post_window: float = 15.0
    migration_timeout: float = 600.0
    metrics_interval: float = 1.0
    migrate_fraction: float = 0.5
    max_retries: int = 5
    query_mix: dict[str, float] = {
        "new_order": 1.0, "payment": 1.0, "order_status": 1.0,
        "delivery": 1.0, "stock_level": 1.0,
    }
    # operators / offload / mvcc_move knobs
    operator_records: int = 100_000
    offload_concurrency: list[int] = [1, 2, 4, 8, 12, 16]
    offload_duration: float = 20.0
    offload_records: int = 5_000
    offload_think_time: float = 0.3
    offload_sort_unit: float = 3.3e-6
    offload_monitor_interval: float = 0.5
    update_ratios: list[float] = [0.0, 0.25, 0.5, 0.75, 1.0]
    mvcc_move_records: int = 5_000
    mvcc_move_clients: int = 20
    mvcc_move_think_time: float = 0.01
    mvcc_move_at: float = 1.0
    storage_sample_interval: float = 0.005
    helpers: int = 2


class LoggingConfig(BaseModel):
    level: str = "INFO"
    file: str = ""


class Settings(BaseModel):
    cluster: ClusterConfig
    bench: BenchConfig
    logging: LoggingConfig
    profiles: dict[str, dict[str, Any]] = {}


def _load() -> Settings:
    with open(_CONFIG_PATH, "r") as f:
        raw = yaml.safe_load(f)
    return Settings(**raw)


settings: Settings = _load()


# ── profiles & overrides ─────────────────────────────────────

def cluster_config(profile: str = "desk", **overrides: Any) -> ClusterConfig:
    """Desk defaults, optionally overlaid by a named profile and overrides."""
    data = settings.cluster.model_dump()
    if profile != "desk":
        if profile not in settings.profiles:
            raise ConfigError([f"profile: unknown profile '{profile}'"])
        data.update(settings.profiles[profile])
    data.update(overrides)
    return _build(data)


def load_config_file(path: str | Path, base: ClusterConfig | None = None) -> ClusterConfig:
    """Overlay a flat key=value file onto `base` (desk defaults if None)."""
    data = (base or settings.cluster).model_dump()
    problems = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key=value")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in ClusterConfig.model_fields:
            problems.append(f"{key}: unknown field")
            continue
        data[key] = value
    if problems:
        raise ConfigError(problems)
    return _build(data)


def _build(data: dict[str, Any]) -> ClusterConfig:
    try:
        return ClusterConfig(**data)
    except ValidationError as e:
        raise ConfigError([f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors()]) from e


def validate_config(cfg: ClusterConfig) -> ClusterConfig:
    """Return cfg unchanged, or raise ConfigError listing every violation."""
    problems = []
    for name, value in cfg.model_dump().items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            continue
        if value <= 0:
            problems.append(f"{name}: must be positive (got {value})")
    if not cfg.cpu_lower_threshold < cfg.cpu_upper_threshold:
        problems.append("threshold order: cpu_lower_threshold must be below cpu_upper_threshold")
    if cfg.cpu_upper_threshold > 1:
        problems.append("cpu_upper_threshold: must be at most 1")
    if not cfg.iops_band_low < cfg.iops_band_high:
        problems.append("iops band order: iops_band_low must be below iops_band_high")
    if cfg.p_standby >= cfg.p_idle or cfg.p_idle > cfg.p_max:
        problems.append("power curve: need p_standby < p_idle <= p_max")
    if cfg.record_size > cfg.page_size:
        problems.append("record_size: larger than page_size")
    if cfg.cc_engine not in ("mvcc", "mgl"):
        problems.append(f"cc_engine: expected mvcc or mgl (got {cfg.cc_engine})")
    if problems:
        raise ConfigError(problems)
    return cfg


def configure_logging(level: str | None = None) -> None:
    cfg = settings.logging
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if cfg.file:
        Path(cfg.file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(cfg.file))
    logging.basicConfig(
        level=getattr(logging, (level or cfg.level).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
    )
