"""Seeded synthetic experiment logs with heavy-tailed metric values.

Metric values are ``min(ceil(L), cap)`` with ``L`` Lomax (Pareto II)
distributed, so most values sit near 1 and ``P(value <= k) = 1 - (1+k)^-alpha``
below the cap.  First-expose days decay geometrically from the start day.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import format_date, parse_date

CLIENT_TYPES = ("android", "ios", "pc")
EXPOSE_HEADER = ("strategy-id", "analysis-unit-id", "randomization-unit-id", "first-expose-date")
METRIC_HEADER = ("date", "metric-id", "analysis-unit-id", "value")
DIMENSION_HEADER = ("date", "dimension-name", "analysis-unit-id", "value")


@dataclass
class SyntheticConfig:
    units: int = 10_000
    metrics: int = 5
    days: int = 7
    pre_days: int = 0
    strategies: int = 3
    alpha: float = 1.16
    cap: int | list[int] = 100
    density: float = 0.6
    exposure: float = 0.9
    expose_decay: float = 0.5
    start: int = 20240201
    seed: int = 0
    dimensions: bool = True

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("pareto alpha must be positive")
        caps = self.cap if isinstance(self.cap, list) else [self.cap] * self.metrics
        if len(caps) != self.metrics or min(caps) < 1:
            raise ValueError("need one positive cap per metric")
        if not 0 < self.density <= 1 or not 0 < self.exposure <= 1:
            raise ValueError("density and exposure must lie in (0, 1]")

    @property
    def caps(self) -> list[int]:
        return self.cap if isinstance(self.cap, list) else [self.cap] * self.metrics

    @property
    def start_day(self) -> int:
        return parse_date(self.start)

    @property
    def first_day(self) -> int:
        return self.start_day - self.pre_days

    @property
    def all_days(self) -> list[int]:
        return list(range(self.first_day, self.start_day + self.days))


@dataclass
class SyntheticData:
    config: SyntheticConfig
    expose: list[tuple] = field(default_factory=list)
    metrics: list[tuple] = field(default_factory=list)
    dimensions: list[tuple] = field(default_factory=list)

    @property
    def strategy_ids(self) -> list[str]:
        return [f"s{i}" for i in range(self.config.strategies)]

    @property
    def metric_ids(self) -> list[str]:
        return [f"m{i}" for i in range(self.config.metrics)]


def pareto_values(rng: np.random.Generator, alpha: float, cap: int, size: int) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("pareto alpha must be positive")
    raw = np.ceil(rng.pareto(alpha, size))
    return np.minimum(np.maximum(raw, 1), cap).astype(np.int64)


def unit_ids(n: int) -> list[bytes]:
    return [b"u%08d" % i for i in range(n)]


def generate(cfg: SyntheticConfig) -> SyntheticData:
    rng = np.random.default_rng(cfg.seed)
    ids = unit_ids(cfg.units)
    out = SyntheticData(cfg)

    arm = rng.integers(0, cfg.strategies, cfg.units)
    exposed = rng.random(cfg.units) < cfg.exposure
    lag = np.minimum(rng.geometric(cfg.expose_decay, cfg.units) - 1, cfg.days - 1)
    start = cfg.start_day
    for i in np.flatnonzero(exposed).tolist():
        out.expose.append((f"s{arm[i]}", ids[i], ids[i], start + int(lag[i])))

    for m, cap in enumerate(cfg.caps):
        for day in cfg.all_days:
            active = np.flatnonzero(rng.random(cfg.units) < cfg.density)
            values = pareto_values(rng, cfg.alpha, cap, active.size)
            name = f"m{m}"
            out.metrics.extend(
                (name, day, ids[i], v) for i, v in zip(active.tolist(), values.tolist())
            )

    if cfg.dimensions:
        client = rng.integers(0, len(CLIENT_TYPES), cfg.units)
        version = rng.integers(120, 150, cfg.units)
        for k, day in enumerate(cfg.all_days):
            bumped = version + (rng.random(cfg.units) < 0.1 * k)
            out.dimensions.extend(
                ("client-type", day, ids[i], CLIENT_TYPES[client[i]]) for i in range(cfg.units)
            )
            out.dimensions.extend(
                ("client-version", day, ids[i], int(bumped[i])) for i in range(cfg.units)
            )
    return out


def write_tsv(data: SyntheticData, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, header, rows, fmt in (
        ("expose", EXPOSE_HEADER, data.expose, lambda r: (r[0], r[1].decode(), r[2].decode(), format_date(r[3]))),
        ("metric", METRIC_HEADER, data.metrics, lambda r: (format_date(r[1]), r[0], r[2].decode(), r[3])),
        ("dimension", DIMENSION_HEADER, data.dimensions, lambda r: (format_date(r[1]), r[0], r[2].decode(), r[3])),
    ):
        path = out / f"{name}.tsv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(header)
            w.writerows(fmt(r) for r in rows)
        paths[name] = path
    return paths


def describe(cfg: SyntheticConfig) -> str:
    first = dt.date(1970, 1, 1) + dt.timedelta(days=cfg.first_day)
    return (
        f"{cfg.units} units, {cfg.metrics} metrics, {cfg.pre_days}+{cfg.days} days "
        f"from {first:%Y%m%d}, {cfg.strategies} strategies, alpha={cfg.alpha}, caps={cfg.caps}"
    )
