"""TOML run and simulation configuration."""

from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .errors import ValidationError
from .netbuild import BucketConfig, PeriodSpec
from .simulate import SimConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SE_METHODS = ("bootstrap", "sandwich", "none")


@dataclass(frozen=True)
class PeriodConfig:
    """One outcome period of a run.

    Attributes:
        label: Column heading in the result tables.
        period: Years, lookback and co-authorship window.
        covid_index: Also fit with the Covid index as an extra regressor.
    """

    label: str
    period: PeriodSpec
    covid_index: bool = False


@dataclass(frozen=True)
class EstimationConfig:
    r_bar: int | str = "auto"
    r_bar_start: int = 2
    stability_tol: float = 0.01
    tol: float = 1e-4
    max_outer: int = 100
    gradient: str = "analytic"
    se_method: str = "bootstrap"
    bootstrap: int = 100
    n_jobs: int = 1

    def __post_init__(self):
        if isinstance(self.r_bar, str) and self.r_bar != "auto":
            raise ValidationError(
                f"estimation.r_bar must be an integer or 'auto', got {self.r_bar!r}"
            )
        if isinstance(self.r_bar, int) and self.r_bar < 1:
            raise ValidationError("estimation.r_bar must be at least 1")
        if self.se_method not in SE_METHODS:
            raise ValidationError(
                f"estimation.se_method must be one of {', '.join(SE_METHODS)}"
            )
        if self.gradient not in ("analytic", "numeric"):
            raise ValidationError("estimation.gradient must be 'analytic' or 'numeric'")

    def fit_kwargs(self) -> dict[str, Any]:
        return {"tol": self.tol, "max_outer": self.max_outer, "gradient": self.gradient}


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs; defaults are written to the manifest."""

    publications: Path
    scholars: Path
    periods: tuple[PeriodConfig, ...]
    output_dir: Path = Path("results")
    year_range: tuple[int, int] | None = None
    min_joint_papers: int = 2
    buckets: BucketConfig = field(default_factory=BucketConfig)
    sieve_degree: int = 2
    formation_tol: float = 1e-8
    covid_window: tuple[int, int] = (2019, 2021)
    covid_threshold: float = 0.5
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    seed: int = 0

    def __post_init__(self):
        if not self.periods:
            raise ValidationError("At least one period is required")
        labels = [p.label for p in self.periods]
        if len(set(labels)) != len(labels):
            raise ValidationError("Period labels must be unique")
        ordered = sorted(self.periods, key=lambda p: p.period.start_year)
        for a, b in zip(ordered, ordered[1:]):
            if b.period.start_year <= a.period.end_year:
                raise ValidationError(
                    f"periods {a.label} ({a.period.label}) and {b.label} "
                    f"({b.period.label}) overlap"
                )
        if self.min_joint_papers < 1:
            raise ValidationError("network.min_joint_papers must be at least 1")
        if self.sieve_degree < 0:
            raise ValidationError("formation.sieve_degree must be >= 0")
        for name in ("publications", "scholars"):
            path = getattr(self, name)
            if not Path(path).exists():
                raise ValidationError(f"data.{name}: file not found: {path}")

    def manifest(self) -> dict[str, Any]:
        """Every setting, defaults included, in JSON-ready form."""
        data = asdict(self)
        data["publications"] = str(self.publications)
        data["scholars"] = str(self.scholars)
        data["output_dir"] = str(self.output_dir)
        return data


def _check_keys(table: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ValidationError(
            "Unknown config key(s): " + ", ".join(prefix + k for k in unknown)
        )


def _read_toml(path: str | os.PathLike) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"Config file not found: {path}")
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ValidationError(f"Cannot parse {path}: {e}") from e


def _period(entry: dict, lookback: int, network_years: int | None) -> PeriodConfig:
    _check_keys(
        entry,
        {"label", "start", "end", "covid_index", "lookback_years", "network_years"},
        "periods",
    )
    for key in ("label", "start", "end"):
        if key not in entry:
            raise ValidationError(f"periods.{key} is required")
    spec = PeriodSpec(
        start_year=int(entry["start"]),
        end_year=int(entry["end"]),
        lookback_years=int(entry.get("lookback_years", lookback)),
        network_years=entry.get("network_years", network_years),
    )
    covid = bool(entry.get("covid_index", False))
    return PeriodConfig(str(entry["label"]), spec, covid)


def load_run_config(path: str | os.PathLike) -> RunConfig:
    """Parse a run configuration; relative paths resolve against its folder.

    Raises:
        ValidationError: On unknown keys or bucket names, overlapping
            periods, missing data files or malformed TOML.
    """
    raw = _read_toml(path)
    base = Path(path).parent
    _check_keys(
        raw,
        {
            "data",
            "network",
            "periods",
            "buckets",
            "formation",
            "covid",
            "estimation",
            "seed",
            "output_dir",
        },
        "",
    )
    data = raw.get("data", {})
    _check_keys(data, {"publications", "scholars", "year_range"}, "data")
    for key in ("publications", "scholars"):
        if key not in data:
            raise ValidationError(f"data.{key} is required")
    network = raw.get("network", {})
    _check_keys(
        network, {"min_joint_papers", "window_years", "lookback_years"}, "network"
    )
    formation = raw.get("formation", {})
    _check_keys(formation, {"sieve_degree", "tol"}, "formation")
    covid = raw.get("covid", {})
    _check_keys(covid, {"window", "threshold"}, "covid")
    estimation = raw.get("estimation", {})
    _check_keys(estimation, set(EstimationConfig.__dataclass_fields__), "estimation")

    periods = tuple(
        _period(p, network.get("lookback_years", 3), network.get("window_years"))
        for p in raw.get("periods", [])
    )
    year_range = data.get("year_range")
    return RunConfig(
        publications=base / data["publications"],
        scholars=base / data["scholars"],
        periods=periods,
        output_dir=base / raw.get("output_dir", "results"),
        year_range=tuple(year_range) if year_range else None,
        min_joint_papers=int(network.get("min_joint_papers", 2)),
        buckets=BucketConfig.from_mapping(raw.get("buckets", {})),
        sieve_degree=int(formation.get("sieve_degree", 2)),
        formation_tol=float(formation.get("tol", 1e-8)),
        covid_window=tuple(covid.get("window", (2019, 2021))),
        covid_threshold=float(covid.get("threshold", 0.5)),
        estimation=EstimationConfig(**estimation),
        seed=int(raw.get("seed", 0)),
    )


def load_sim_config(path: str | os.PathLike) -> SimConfig:
    """Parse a simulation design; the tables map onto :class:`SimConfig`."""
    return SimConfig.from_mapping(_read_toml(path))
