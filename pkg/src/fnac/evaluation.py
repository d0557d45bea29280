"""Backtests, baselines, the dynamic-programming oracle and CSV reports."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .actor import DISCRETE, ConstantPolicy
from .critic import BoostedEnsemble, feature_importance
from .env import EnvConfig, TransitionBatch, rollout
from .marketdata import Episode, MarketSeries

ORDER_BINS = np.linspace(0.0, 2.0, 21)
REWARD_BINS = 50


@dataclass
class BacktestResult:
    """Greedy or sampled evaluation of one policy over a series, for one or more seeds."""

    dates: list
    batches: list[TransitionBatch]
    ref_prices: np.ndarray
    last_bar: np.ndarray

    @property
    def n_seeds(self) -> int:
        return len(self.batches)

    @property
    def episode_returns(self) -> np.ndarray:
        """Shape (seeds, episodes)."""
        n = len(self.dates)
        return np.stack([np.bincount(b.episode, weights=b.rewards, minlength=n) for b in self.batches])

    @property
    def episode_returns_pct(self) -> np.ndarray:
        return 100.0 * self.episode_returns / self.ref_prices[None, :]

    def cumulative_pct(self) -> tuple[np.ndarray, np.ndarray]:
        curves = np.cumsum(self.episode_returns_pct, axis=1)
        return curves.mean(axis=0), curves.std(axis=0)

    @property
    def rewards(self) -> np.ndarray:
        return np.concatenate([b.rewards for b in self.batches])

    def order_sizes(self, include_close: bool = False) -> np.ndarray:
        parts = [b.order_sizes if include_close else b.order_sizes[~b.forced] for b in self.batches]
        return np.concatenate(parts)

    def mean_abs_allocation(self) -> float:
        return float(np.mean(np.concatenate([np.abs(b.actions[~b.forced]) for b in self.batches])))

    def allocation_grid(self, seed_index: int = 0) -> np.ndarray:
        """Allocation held during each minute of each day, shape (episodes, minutes)."""
        b = self.batches[seed_index]
        width = int(self.last_bar.max())
        grid = np.zeros((len(self.dates), width))
        dec = ~b.forced
        ep, t, a = b.episode[dec], b.minutes[dec], b.actions[dec]
        for e in range(len(self.dates)):
            sel = ep == e
            times, acts = t[sel], a[sel]
            ends = np.append(times[1:], self.last_bar[e])
            for t0, t1, av in zip(times, ends, acts):
                grid[e, t0:t1] = av
        return grid


def backtest(series: MarketSeries, policy, cfg: EnvConfig, seeds: Sequence[int] = (0,), greedy: bool = True,
             workers: int = 1) -> BacktestResult:
    """Evaluate ``policy`` on every episode; with ``greedy`` the seeds are irrelevant."""
    seeds = list(seeds) or [0]
    batches = [rollout(series, policy, cfg, seed=s, greedy=greedy, workers=workers) for s in seeds]
    refs = np.array([ep.mid[cfg.warmup] for ep in series.episodes])
    last = np.array([ep.last for ep in series.episodes])
    return BacktestResult(series.dates, batches, refs, last)


def baseline(kind: str, series: MarketSeries, cfg: EnvConfig) -> BacktestResult:
    values = {"buy_hold": 1.0, "sell_hold": -1.0}
    if kind not in values:
        raise ValueError(f"unknown baseline {kind!r}")
    return backtest(series, ConstantPolicy(values[kind], cfg.mode), cfg)


@dataclass
class OracleResult:
    value: float
    path: np.ndarray
    times: np.ndarray


def path_return(episode: Episode, cfg: EnvConfig, actions: Sequence[float]) -> float:
    """Episode return of a fixed action sequence, accumulated in time order."""
    times = cfg.decision_times(episode.last)
    nexts = cfg.next_times(episode.last)
    p, s = episode.mid, episode.spread
    total, x = 0.0, 0.0
    for t, tn, a in zip(times, nexts, actions):
        total += a * (p[tn] - p[t]) - cfg.fee.cost(abs(a - x), s[t])
        x = a
    return total - cfg.fee.cost(abs(x), s[episode.last])


def dp_oracle(episode: Episode, cfg: EnvConfig) -> OracleResult:
    """Optimal discrete allocation path by backward induction over (decision, allocation)."""
    if cfg.mode != DISCRETE:
        raise ValueError("dp_oracle supports discrete mode only")
    times = cfg.decision_times(episode.last)
    nexts = cfg.next_times(episode.last)
    p, s = episode.mid, episode.spread
    cand = np.array([0.0, -1.0, 1.0])  # preference order on ties
    states = np.array([-1.0, 0.0, 1.0])
    value = np.array([-cfg.fee.cost(abs(x), s[episode.last]) for x in states])
    policy = np.zeros((len(times), 3))
    for j in range(len(times) - 1, -1, -1):
        t, tn = times[j], nexts[j]
        new = np.empty(3)
        for xi, x in enumerate(states):
            q = np.array([a * (p[tn] - p[t]) - cfg.fee.cost(abs(a - x), s[t]) + value[int(a) + 1] for a in cand])
            k = int(np.argmax(q))
            new[xi], policy[j, xi] = q[k], cand[k]
        value = new
    path, x = np.empty(len(times)), 0.0
    for j in range(len(times)):
        x = policy[j, int(x) + 1]
        path[j] = x
    return OracleResult(path_return(episode, cfg, path), path, times)


def _fmt(x) -> str:
    return repr(float(x))


def _write(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def reward_histogram(rewards: np.ndarray, bins: int = REWARD_BINS):
    lo, hi = float(rewards.min()), float(rewards.max())
    if hi <= lo:
        return np.array([1.0 * len(rewards)]), np.array([lo, hi])
    counts, edges = np.histogram(rewards, bins=bins, range=(lo, hi))
    return counts, edges


def report(result: BacktestResult, out_dir: str | Path, critic: BoostedEnsemble | None = None) -> list[Path]:
    """Write the CSV report set into ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    mean, std = result.cumulative_pct()
    p = out / "cumulative_returns.csv"
    _write(p, ["date", "mean", "std"], [[str(d), _fmt(m), _fmt(s)] for d, m, s in zip(result.dates, mean, std)])
    written.append(p)

    grid = result.allocation_grid()
    p = out / "allocation_heatmap.csv"
    _write(p, ["date", *(f"m{m}" for m in range(grid.shape[1]))],
           [[str(d), *map(_fmt, row)] for d, row in zip(result.dates, grid)])
    written.append(p)

    sizes = result.order_sizes(include_close=True)
    counts, edges = np.histogram(sizes, bins=ORDER_BINS)
    p = out / "order_sizes.csv"
    _write(p, ["bin_lo", "bin_hi", "count", "fraction"],
           [[_fmt(a), _fmt(b), int(c), _fmt(c / len(sizes))] for a, b, c in zip(edges[:-1], edges[1:], counts)])
    written.append(p)

    rewards = result.rewards
    counts, edges = reward_histogram(rewards)
    p = out / "reward_hist.csv"
    _write(p, ["bin_lo", "bin_hi", "count"], [[_fmt(a), _fmt(b), int(c)] for a, b, c in zip(edges[:-1], edges[1:], counts)])
    written.append(p)

    p = out / "feature_importance.csv"
    rows = []
    if critic is not None and critic.trees:
        imp = feature_importance(critic)
        rows = [[name, _fmt(v)] for name, v in zip(imp.names, imp.values)]
    _write(p, ["feature", "importance"], rows)
    written.append(p)

    ep = result.episode_returns
    p = out / "summary.csv"
    _write(p, ["metric", "value"], [
        ["episodes", len(result.dates)],
        ["seeds", result.n_seeds],
        ["mean_episode_return", _fmt(ep.mean())],
        ["std_episode_return", _fmt(ep.std())],
        ["mean_episode_return_pct", _fmt(result.episode_returns_pct.mean())],
        ["reward_mean", _fmt(rewards.mean())],
        ["reward_std", _fmt(rewards.std())],
        ["median_order_size", _fmt(np.median(result.order_sizes()))],
        ["mean_abs_allocation", _fmt(result.mean_abs_allocation())],
    ])
    written.append(p)
    return written
