"""Pipeline configuration, stored as YAML."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .evaluator import DEFAULT_RESTARTS, DEFAULT_SEED
from .ocsvm import DEFAULT_GAMMA_GRID, DEFAULT_NU_GRID
from .selector import DEFAULT_K, DEFAULT_N_BASE, DEFAULT_N_CORR
from .stats import DEFAULT_ALPHA, DEFAULT_WINDOW


class ConfigError(ValueError):
    pass


def _interval(value, what: str) -> tuple[int, int] | None:
    if value is None:
        return None
    try:
        lo, hi = (int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a pair [start_bin, end_bin]") from None
    if lo > hi:
        raise ConfigError(f"{what} [{lo}, {hi}] has start > end")
    if lo < 0:
        raise ConfigError(f"{what} must not start before bin 0")
    return lo, hi


def _overlaps(a, b) -> bool:
    return a is not None and b is not None and not (a[1] < b[0] or a[0] > b[1])


@dataclass
class DatasetEntry:
    """One labelled input: an event log, MRT dump or feature matrix."""

    name: str
    path: str
    fit_range: tuple[int, int] | None = None
    anomaly_interval: tuple[int, int] | None = None

    def __post_init__(self):
        self.fit_range = _interval(self.fit_range, f"dataset {self.name!r} fit_range")
        self.anomaly_interval = _interval(self.anomaly_interval, f"dataset {self.name!r} anomaly_interval")
        if _overlaps(self.fit_range, self.anomaly_interval):
            raise ConfigError(f"dataset {self.name!r}: anomaly interval overlaps the fit range")


@dataclass
class PipelineConfig:
    datasets: list[DatasetEntry] = field(default_factory=list)
    bin_width: int = 60
    fit_range: tuple[int, int] | None = None
    anomaly_interval: tuple[int, int] | None = None
    window: int = DEFAULT_WINDOW
    alpha: float = DEFAULT_ALPHA
    k: int = DEFAULT_K
    n_base: int = DEFAULT_N_BASE
    n_corr: int = DEFAULT_N_CORR
    score_metric: str = "youden"
    kernel: str = "rbf"
    nu: float = 0.02
    gamma: float | str = "auto"  # "auto" = 1 / number of selected features
    tol: float = 1e-3
    max_iter: int = 10_000_000
    tune: bool = False
    nu_grid: list[float] = field(default_factory=lambda: list(DEFAULT_NU_GRID))
    gamma_grid: list[float] = field(default_factory=lambda: list(DEFAULT_GAMMA_GRID))
    guard_bins: int | None = None  # None = window
    seed: int = DEFAULT_SEED
    restarts: int = DEFAULT_RESTARTS
    cluster_k: list[int] = field(default_factory=lambda: [2, 3])
    output_dir: str = "out"

    def __post_init__(self):
        self.datasets = [d if isinstance(d, DatasetEntry) else DatasetEntry(**d) for d in self.datasets]
        self.fit_range = _interval(self.fit_range, "fit_range")
        self.anomaly_interval = _interval(self.anomaly_interval, "anomaly_interval")
        self.validate()

    def validate(self) -> None:
        if self.bin_width <= 0:
            raise ConfigError("bin_width must be positive")
        if self.window < 3:
            raise ConfigError("window must be >= 3")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.n_base < 0 or self.n_corr < 0:
            raise ConfigError("n_base and n_corr must be non-negative")
        if self.score_metric not in ("youden", "f1"):
            raise ConfigError("score_metric must be 'youden' or 'f1'")
        if self.kernel not in ("rbf", "linear"):
            raise ConfigError("kernel must be 'rbf' or 'linear'")
        if not 0 < self.nu <= 1:
            raise ConfigError("nu must lie in (0, 1]")
        if self.gamma != "auto" and not (isinstance(self.gamma, (int, float)) and self.gamma > 0):
            raise ConfigError("gamma must be 'auto' or a positive number")
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("tol must be positive and max_iter >= 1")
        if any(not 0 < v <= 1 for v in self.nu_grid) or any(v <= 0 for v in self.gamma_grid):
            raise ConfigError("tuning grid values out of range")
        if self.guard_bins is not None and self.guard_bins < 0:
            raise ConfigError("guard_bins must be non-negative")
        if self.restarts < 1 or any(c < 1 for c in self.cluster_k):
            raise ConfigError("restarts and cluster_k entries must be >= 1")
        if _overlaps(self.fit_range, self.anomaly_interval):
            raise ConfigError("anomaly interval overlaps the fit range")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ConfigError("dataset names must be unique")

    @property
    def guard(self) -> int:
        return self.window if self.guard_bins is None else self.guard_bins

    def gamma_for(self, n_features: int) -> float:
        return 1.0 / max(n_features, 1) if self.gamma == "auto" else float(self.gamma)

    def check_paths(self, base: Path | None = None) -> None:
        for d in self.datasets:
            p = Path(d.path) if base is None else Path(base) / d.path
            if not p.exists():
                raise FileNotFoundError(f"dataset {d.name!r}: {p} does not exist")

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("fit_range", "anomaly_interval"):
            out[key] = list(out[key]) if out[key] is not None else None
        for d in out["datasets"]:
            for key in ("fit_range", "anomaly_interval"):
                d[key] = list(d[key]) if d[key] is not None else None
        return out

    @classmethod
    def from_dict(cls, data: dict | None) -> "PipelineConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def dumps_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def loads_config(text: str) -> PipelineConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return PipelineConfig.from_dict(data)


def load_config(path) -> PipelineConfig:
    return loads_config(Path(path).read_text(encoding="utf-8"))


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg), encoding="utf-8")
