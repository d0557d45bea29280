"""Minute-bar market data: CSV ingestion, synthetic markets and agent observations."""
from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence
from zoneinfo import ZoneInfo

import numpy as np

logger = logging.getLogger(__name__)

N_DELTAS = 45
FEATURE_NAMES: tuple[str, ...] = tuple(f"d1_{n}" for n in range(N_DELTAS)) + (
    "spread",
    "weekday",
    "minute",
    "allocation",
)
N_FEATURES = len(FEATURE_NAMES)
SPREAD_IDX = N_DELTAS
WEEKDAY_IDX = N_DELTAS + 1
MINUTE_IDX = N_DELTAS + 2
ALLOCATION_IDX = N_DELTAS + 3

CSV_HEADER = ("timestamp", "mid", "spread")


class DataFormatError(ValueError):
    """A CSV row could not be parsed."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DataValidationError(ValueError):
    """Parsed data violates an ordering or value constraint."""


@dataclass(frozen=True)
class CalendarWindow:
    """Fixed intraday trading window, expressed in a local timezone."""

    open: str = "08:00"
    tz: str = "Europe/Berlin"
    minutes: int = 600

    def __post_init__(self):
        if self.minutes < 1:
            raise ValueError("calendar window must span at least one minute")
        self.open_time  # validates format

    @property
    def open_time(self) -> dt.time:
        return dt.time.fromisoformat(self.open)

    @property
    def zone(self) -> ZoneInfo:
        return ZoneInfo(self.tz)

    @property
    def n_bars(self) -> int:
        return self.minutes + 1

    def open_utc(self, day: dt.date) -> dt.datetime:
        local = dt.datetime.combine(day, self.open_time, tzinfo=self.zone)
        return local.astimezone(dt.timezone.utc)


@dataclass(frozen=True)
class MarketBar:
    timestamp: dt.datetime
    mid: float
    spread: float

    def __post_init__(self):
        if not self.mid > 0:
            raise DataValidationError(f"mid price must be positive, got {self.mid}")
        if not self.spread >= 0:
            raise DataValidationError(f"spread must be non-negative, got {self.spread}")


@dataclass(eq=False)
class Episode:
    """One trading day of minute bars.

    Arrays are indexed by minute since the window open; the last bar is the
    forced-close bar. Loaders only emit full calendar windows, but shorter
    episodes are accepted so small fixtures can be built by hand.
    """

    date: dt.date
    mid: np.ndarray
    spread: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.mid = np.asarray(self.mid, dtype=float)
        self.spread = np.asarray(self.spread, dtype=float)
        if self.mid.ndim != 1 or self.mid.shape != self.spread.shape:
            raise DataValidationError("mid and spread must be 1-D arrays of equal length")
        if len(self.mid) < 2:
            raise DataValidationError("an episode needs at least two bars")
        if not np.all(self.mid > 0):
            raise DataValidationError("mid prices must be positive")
        if not np.all(self.spread >= 0):
            raise DataValidationError("spreads must be non-negative")
        if self.timestamps is None:
            start = np.datetime64(dt.datetime.combine(self.date, dt.time()), "m")
            self.timestamps = start + np.arange(len(self.mid)).astype("timedelta64[m]")
        else:
            self.timestamps = np.asarray(self.timestamps, dtype="datetime64[m]")
            steps = np.diff(self.timestamps).astype(int)
            if np.any(steps != 1):
                raise DataValidationError(f"bars of {self.date} are not at 1-minute spacing")
        self.mid.setflags(write=False)
        self.spread.setflags(write=False)

    def __len__(self) -> int:
        return len(self.mid)

    @property
    def weekday(self) -> int:
        return self.date.weekday()

    @property
    def last(self) -> int:
        """Index of the forced-close bar."""
        return len(self.mid) - 1

    @property
    def bars(self) -> list[MarketBar]:
        stamps = self.timestamps.astype("datetime64[s]").astype(dt.datetime)
        return [
            MarketBar(ts.replace(tzinfo=dt.timezone.utc), float(p), float(s))
            for ts, p, s in zip(stamps, self.mid, self.spread)
        ]

    def relative_changes(self) -> np.ndarray:
        """rel[i] = (p_i - p_{i-1}) / p_{i-1}; rel[0] is NaN."""
        rel = np.full(len(self.mid), np.nan)
        rel[1:] = (self.mid[1:] - self.mid[:-1]) / self.mid[:-1]
        return rel


@dataclass
class LoadReport:
    rows: int = 0
    days_seen: int = 0
    episodes: int = 0
    skipped: list[tuple[dt.date, str]] = field(default_factory=list)

    @property
    def n_skipped(self) -> int:
        return len(self.skipped)


@dataclass
class MarketSeries:
    episodes: list[Episode]
    report: LoadReport | None = None

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self) -> Iterator[Episode]:
        return iter(self.episodes)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return MarketSeries(self.episodes[idx])
        return self.episodes[idx]

    @property
    def dates(self) -> list[dt.date]:
        return [ep.date for ep in self.episodes]

    def split(self, *counts: int) -> list["MarketSeries"]:
        """Consecutive chronological blocks of the given sizes; the remainder forms a last block."""
        out, start = [], 0
        for n in counts:
            out.append(MarketSeries(self.episodes[start : start + n]))
            start += n
        out.append(MarketSeries(self.episodes[start:]))
        return out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for ep in self.episodes:
                stamps = ep.timestamps.astype("datetime64[s]").astype(dt.datetime)
                for ts, p, s in zip(stamps, ep.mid, ep.spread):
                    writer.writerow([ts.strftime("%Y-%m-%dT%H:%M:%SZ"), repr(float(p)), repr(float(s))])


def _parse_timestamp(text: str) -> dt.datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = dt.datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=dt.timezone.utc)
    return ts.astimezone(dt.timezone.utc)


def load_csv(path: str | Path, calendar: CalendarWindow | None = None) -> MarketSeries:
    """Read a ``timestamp,mid,spread`` CSV into complete trading-day episodes.

    Days whose window lacks any minute are skipped and recorded in the
    returned series' ``report``.
    """
    calendar = calendar or CalendarWindow()
    zone = calendar.zone
    days: dict[dt.date, list[tuple[dt.datetime, float, float, int]]] = {}
    report = LoadReport()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataFormatError(1, f"expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise DataFormatError(lineno, f"expected 3 columns, got {len(row)}")
            try:
                ts = _parse_timestamp(row[0])
                mid = float(row[1])
                spread = float(row[2])
            except ValueError as exc:
                raise DataFormatError(lineno, str(exc)) from None
            if not (np.isfinite(mid) and mid > 0):
                raise DataFormatError(lineno, f"mid must be positive and finite, got {row[1]!r}")
            if not (np.isfinite(spread) and spread >= 0):
                raise DataFormatError(lineno, f"spread must be non-negative and finite, got {row[2]!r}")
            report.rows += 1
            days.setdefault(ts.astimezone(zone).date(), []).append((ts, mid, spread, lineno))

    episodes = []
    for day in sorted(days):
        rows = days[day]
        for prev, cur in zip(rows, rows[1:]):
            if cur[0] <= prev[0]:
                raise DataValidationError(
                    f"timestamps not strictly increasing on {day} (line {cur[3]})"
                )
        report.days_seen += 1
        start = calendar.open_utc(day)
        end = start + dt.timedelta(minutes=calendar.minutes)
        window = [r for r in rows if start <= r[0] <= end]
        expected = [start + dt.timedelta(minutes=i) for i in range(calendar.n_bars)]
        if [r[0] for r in window] != expected:
            reason = f"{len(window)} of {calendar.n_bars} window bars present"
            report.skipped.append((day, reason))
            logger.info("skipping %s: %s", day, reason)
            continue
        stamps = np.array([np.datetime64(r[0].replace(tzinfo=None), "m") for r in window])
        episodes.append(
            Episode(
                date=day,
                mid=np.array([r[1] for r in window]),
                spread=np.array([r[2] for r in window]),
                timestamps=stamps,
            )
        )
    report.episodes = len(episodes)
    return MarketSeries(episodes, report)


@dataclass(frozen=True)
class SyntheticSpec:
    """Multiplicative random walk with a planted minute-of-day drift.

    ``p[t+1] = p[t] * (1 + amplitude * sin(2*pi*t/period + phase) + noise * eps)``
    with ``eps`` standard normal. Each day opens at the previous day's close.
    """

    base_price: float = 1.1
    noise: float = 0.0
    amplitude: float = 5e-5
    phase: float = 0.0
    spread: float = 1e-4
    days: int = 20
    start: str = "2024-01-01"
    period: float | None = None  # defaults to the window length

    def __post_init__(self):
        if not self.base_price > 0:
            raise ValueError("base_price must be positive")
        if not self.noise >= 0:
            raise ValueError("noise must be non-negative")
        if not self.spread >= 0:
            raise ValueError("spread must be non-negative")
        if abs(self.amplitude) >= 1:
            raise ValueError("amplitude must be below 1 in magnitude")
        if self.days < 0:
            raise ValueError("days must be non-negative")

    def drift(self, minute, window: int = 600) -> np.ndarray:
        period = self.period or window
        return self.amplitude * np.sin(2 * np.pi * np.asarray(minute, dtype=float) / period + self.phase)


def business_days(start: dt.date, n: int) -> list[dt.date]:
    out, day = [], start
    while len(out) < n:
        if day.weekday() < 5:
            out.append(day)
        day += dt.timedelta(days=1)
    return out


def synthesize(spec: SyntheticSpec, seed: int, calendar: CalendarWindow | None = None) -> MarketSeries:
    calendar = calendar or CalendarWindow()
    rng = np.random.default_rng(seed)
    minutes = calendar.minutes
    drift = spec.drift(np.arange(minutes), minutes)
    shocks = rng.standard_normal((spec.days, minutes))
    price = spec.base_price
    episodes = []
    for day, eps in zip(business_days(dt.date.fromisoformat(spec.start), spec.days), shocks):
        factors = 1.0 + drift + spec.noise * eps
        if np.any(factors <= 0):
            raise ValueError("synthetic spec produces non-positive prices")
        mid = np.empty(minutes + 1)
        mid[0] = price
        mid[1:] = price * np.cumprod(factors)
        price = mid[-1]
        start = np.datetime64(calendar.open_utc(day).replace(tzinfo=None), "m")
        episodes.append(
            Episode(
                date=day,
                mid=mid,
                spread=np.full(minutes + 1, spec.spread),
                timestamps=start + np.arange(minutes + 1).astype("timedelta64[m]"),
            )
        )
    return MarketSeries(episodes)


@dataclass(frozen=True)
class TradingState:
    deltas: np.ndarray
    spread: float
    weekday: int
    minute: int
    allocation: float

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.deltas, [self.spread, self.weekday, self.minute, self.allocation]])

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "TradingState":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (N_FEATURES,):
            raise ValueError(f"state vector must have {N_FEATURES} entries")
        return cls(
            deltas=vec[:N_DELTAS].copy(),
            spread=float(vec[SPREAD_IDX]),
            weekday=int(vec[WEEKDAY_IDX]),
            minute=int(vec[MINUTE_IDX]),
            allocation=float(vec[ALLOCATION_IDX]),
        )


def episode_features(episode: Episode, times: np.ndarray, allocations: np.ndarray, rel: np.ndarray | None = None) -> np.ndarray:
    """Feature matrix (len(times), 49) for the given minutes and allocations.

    ``rel`` may pass in precomputed ``episode.relative_changes()``.
    """
    times = np.asarray(times, dtype=int)
    if times.size and (times.min() < N_DELTAS or times.max() > episode.last):
        raise IndexError(f"minute index must lie in [{N_DELTAS}, {episode.last}]")
    if rel is None:
        rel = episode.relative_changes()
    out = np.empty((len(times), N_FEATURES))
    out[:, :N_DELTAS] = rel[times[:, None] - np.arange(N_DELTAS)[None, :]]
    out[:, SPREAD_IDX] = episode.spread[times]
    out[:, WEEKDAY_IDX] = episode.weekday
    out[:, MINUTE_IDX] = times
    out[:, ALLOCATION_IDX] = allocations
    return out


def build_state(episode: Episode, t: int, allocation: float) -> TradingState:
    if not -1.0 <= allocation <= 1.0:
        raise ValueError(f"allocation {allocation} outside [-1, 1]")
    vec = episode_features(episode, np.array([t]), np.array([allocation]))[0]
    return TradingState.from_vector(vec)
