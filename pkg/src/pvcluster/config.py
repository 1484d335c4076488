"""Run configuration: a flat TOML file whose keys double as CLI flags.

Keys may sit at top level or inside ``[synth]`` / ``[grid]`` tables; the
tables are only for readability and share one namespace.
"""

import sys
import typing
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .agglomerative import LINKAGES
from .distance import MEAN_EUCLIDEAN, METRICS
from .evaluation import DEFAULT_LEVELS, check_levels
from .synth import SynthConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # paths
    output_dir: str = "out"
    data: Optional[str] = None
    metadata: Optional[str] = None
    # ingest
    profile_len: int = 96
    normalization: str = "capacity"
    missing_tokens: tuple[str, ...] = ("", "NaN", "nan", "NA")
    # embedding
    K: int = 5
    W: int = 100
    alpha: Optional[float] = None
    kmeans_max_iter: int = 300
    kmeans_tol: float = 1e-6
    lda_max_iter: int = 100
    lda_tol: float = 1e-6
    # clustering and scoring
    C: int = 3
    metric: str = "sym_kl"
    linkage: str = "average"
    quantiles: tuple[float, ...] = DEFAULT_LEVELS
    sensitivity: bool = True
    baseline: bool = True
    seed: int = 0
    jobs: int = 1
    # imputation
    system_id: Optional[str] = None
    impute_q: float = 0.5
    # synthetic fleet
    U: int = 60
    days: int = 120
    groups: int = 3
    resolution: int = 15
    missing_day_rate: float = 0.1
    outage_start: Optional[int] = None
    outage_end: Optional[int] = None
    angle_coupling: str = "coupled"
    subday_gaps: bool = False
    start_date: str = "2021-01-01"
    # grid
    C_values: tuple[int, ...] = (4, 6, 8, 10, 12, 16)
    K_values: tuple[int, ...] = (3, 5, 8, 12, 20)
    W_values: tuple[int, ...] = (50, 100, 200, 400)
    metrics: tuple[str, ...] = METRICS
    linkages: tuple[str, ...] = LINKAGES
    seeds: Optional[tuple[int, ...]] = None
    timing: bool = False

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    @property
    def data_path(self) -> Path:
        return Path(self.data) if self.data else self.out / "series.csv"

    @property
    def metadata_path(self) -> Path:
        return Path(self.metadata) if self.metadata else self.out / "metadata.csv"

    def synth_config(self) -> SynthConfig:
        outage = None
        if self.outage_start is not None or self.outage_end is not None:
            if self.outage_start is None or self.outage_end is None:
                raise ConfigError("outage_start and outage_end must be given together")
            outage = (self.outage_start, self.outage_end)
        return SynthConfig(
            U=self.U, days=self.days, groups=self.groups, resolution=self.resolution,
            missing_day_rate=self.missing_day_rate, global_outage=outage,
            angle_coupling=self.angle_coupling, seed=self.seed,
            subday_gaps=self.subday_gaps, start=self.start_date,
        )

    def validate(self) -> "RunConfig":
        checks = [
            (self.profile_len >= 1, "profile_len must be >= 1"),
            (self.normalization in ("capacity", "empirical_max"), "normalization must be capacity or empirical_max"),
            (self.K >= 2, "K must be >= 2"),
            (self.W >= 2, "W must be >= 2"),
            (self.C >= 1, "C must be >= 1"),
            (self.alpha is None or self.alpha > 0, "alpha must be > 0"),
            (self.kmeans_tol > 0 and self.lda_tol > 0, "tolerances must be > 0"),
            (self.kmeans_max_iter >= 1 and self.lda_max_iter >= 1, "iteration caps must be >= 1"),
            (self.metric in METRICS + (MEAN_EUCLIDEAN,), f"metric must be one of {METRICS}"),
            (self.linkage in LINKAGES, f"linkage must be one of {LINKAGES}"),
            (0 < self.impute_q < 1, "impute_q must lie in (0, 1)"),
            (self.jobs >= 1, "jobs must be >= 1"),
            (all(m in METRICS for m in self.metrics), f"metrics must be drawn from {METRICS}"),
            (all(x in LINKAGES for x in self.linkages), f"linkages must be drawn from {LINKAGES}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            check_levels(self.quantiles)
            self.synth_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self


def _base_type(tp):
    """Strip Optional[...] and report (scalar type, is_sequence)."""
    if typing.get_origin(tp) is typing.Union:
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    if typing.get_origin(tp) is tuple:
        return typing.get_args(tp)[0], True
    return tp, False


def _coerce_scalar(kind, value, key):
    if kind is bool:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if kind is int and isinstance(value, float) and not value.is_integer():
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from None


def coerce(key: str, value):
    types = {f.name: f.type for f in fields(RunConfig)}
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    if value is None:
        return None
    kind, seq = _base_type(types[key])
    if seq:
        if isinstance(value, str):
            value = [v for v in value.split(",")] if value.strip() else []
            if kind is str:
                value = [v.strip() for v in value]
        elif not isinstance(value, (list, tuple)):
            value = [value]
        return tuple(_coerce_scalar(kind, v, key) for v in value)
    return _coerce_scalar(kind, value, key)


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    flat = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in ("synth", "grid", "paths"):
                raise ConfigError(f"unknown config table [{key}]")
            flat.update(value)
        else:
            flat[key] = value
    return flat


def build_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = read_config_file(path) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = replace(RunConfig(), **{k: coerce(k, v) for k, v in values.items()})
    return cfg.validate()


def config_keys() -> list[str]:
    return [f.name for f in fields(RunConfig)]
