"""JSON run configuration: parsing into the module dataclasses and data resolution."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .critic import CriticConfig
from .env import EnvConfig, FeeSchedule
from .marketdata import CalendarWindow, MarketSeries, SyntheticSpec, load_csv, synthesize
from .risk import RiskSpec
from .trainer import TrainConfig

SPLITS = ("train", "valid", "valid_actor", "test")


class ConfigError(ValueError):
    pass


def _build(cls, data: dict | None, section: str):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    for k, v in data.items():
        if isinstance(v, list):
            data[k] = tuple(v)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


@dataclass
class RunConfig:
    seed: int = 0
    calendar: CalendarWindow = field(default_factory=CalendarWindow)
    market: SyntheticSpec = field(default_factory=SyntheticSpec)
    data: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: dict = field(default_factory=dict)
    backtest_seeds: tuple[int, ...] = (0,)
    base_dir: Path = Path(".")

    def load_splits(self) -> dict[str, MarketSeries]:
        """Series for each named split, from CSV paths or the synthetic market."""
        if "synthetic" in self.data or not any(k in self.data for k in SPLITS):
            counts = dict(self.data.get("synthetic", {}))
            unknown = set(counts) - set(SPLITS)
            if unknown:
                raise ConfigError(f"unknown split names {sorted(unknown)}")
            sizes = [int(counts.get(k, 0)) for k in SPLITS]
            if sum(sizes) == 0:
                sizes = [self.market.days, 0, 0, 0]
            spec = dataclasses.replace(self.market, days=sum(sizes))
            series = synthesize(spec, self.seed, self.calendar)
            parts = series.split(*sizes)
            return {k: p for k, p in zip(SPLITS, parts)}
        out = {}
        for k in SPLITS:
            if k in self.data:
                path = Path(self.data[k])
                out[k] = load_csv(path if path.is_absolute() else self.base_dir / path, self.calendar)
        return out

    def split(self, name: str) -> MarketSeries:
        splits = self.load_splits()
        if name == "all":
            return MarketSeries([ep for k in SPLITS if k in splits for ep in splits[k].episodes])
        if name not in splits or len(splits[name]) == 0:
            raise ConfigError(f"split {name!r} is empty or not configured")
        return splits[name]


def parse(raw: dict[str, Any], base_dir: Path = Path(".")) -> RunConfig:
    known = {"seed", "calendar", "market", "data", "env", "risk", "critic", "train", "select", "backtest"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    env_raw = dict(raw.get("env", {}))
    fee = _build(FeeSchedule, env_raw.pop("fee", None), "env.fee")
    env = _build(EnvConfig, {**env_raw, "fee": fee}, "env")
    train_raw = dict(raw.get("train", {}))
    train = _build(TrainConfig, {**train_raw, "env": env, "risk": _build(RiskSpec, raw.get("risk"), "risk"),
                                 "critic": _build(CriticConfig, raw.get("critic"), "critic")}, "train")
    select = raw.get("select", {})
    return RunConfig(
        seed=int(raw.get("seed", 0)),
        calendar=_build(CalendarWindow, raw.get("calendar"), "calendar"),
        market=_build(SyntheticSpec, raw.get("market"), "market"),
        data=dict(raw.get("data", {})),
        train=train,
        grid=dict(select.get("grid", {})),
        backtest_seeds=tuple(raw.get("backtest", {}).get("seeds", (0,))),
        base_dir=base_dir,
    )


def load(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse(raw, path.parent)


def to_dict(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["env"]["fee"] = cfg.env.fee.to_dict()
    return d
