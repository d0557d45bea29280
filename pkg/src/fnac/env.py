"""Intraday FX trading MDP with size-dependent fees and action persistence."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .actor import DISCRETE, MODES, PolicyParameters
from .marketdata import FEATURE_NAMES, MINUTE_IDX, ALLOCATION_IDX, N_DELTAS, Episode, MarketSeries, TradingState, episode_features

FEE_KINDS = ("constant", "half-identity", "step")
# episodes per vectorised rollout block; fixed so batch shapes never depend on worker count
ROLLOUT_BLOCK = 16


# g = 1 below 0.75, 1.75 on [0.75, 1.25], 2.75 above 1.25
DEFAULT_STEP = ((0.75, 1.25), (1.0, 1.75, 2.75), (True, False))


@dataclass(frozen=True)
class FeeSchedule:
    """Order-size to spread-multiplier map ``g`` on [0, 2].

    ``step`` uses ``values[i]`` once ``i`` breakpoints have been passed; a
    breakpoint ``b`` is passed when ``x >= b`` if its ``inclusive`` flag is
    set, else when ``x > b``.
    """

    kind: str = "constant"
    value: float = 0.5
    breakpoints: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    inclusive: tuple[bool, ...] = ()

    def __post_init__(self):
        if self.kind not in FEE_KINDS:
            raise ValueError(f"unknown fee kind {self.kind!r}")
        if self.kind == "step" and not self.breakpoints and not self.values:
            object.__setattr__(self, "breakpoints", DEFAULT_STEP[0])
            object.__setattr__(self, "values", DEFAULT_STEP[1])
            object.__setattr__(self, "inclusive", self.inclusive or DEFAULT_STEP[2])
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        inclusive = tuple(bool(i) for i in self.inclusive) or (True,) * len(self.breakpoints)
        object.__setattr__(self, "inclusive", inclusive)
        if self.kind == "constant" and not self.value >= 0:
            raise ValueError("constant fee multiplier must be non-negative")
        if self.kind == "step":
            bp, vals = self.breakpoints, self.values
            if len(vals) != len(bp) + 1 or len(inclusive) != len(bp):
                raise ValueError("step fee needs len(values) == len(breakpoints) + 1")
            if any(b2 < b1 for b1, b2 in zip(bp, bp[1:])) or any(not 0 <= b <= 2 for b in bp):
                raise ValueError("step breakpoints must be sorted within [0, 2]")
            if any(v2 < v1 for v1, v2 in zip(vals, vals[1:])) or min(vals) < 0:
                raise ValueError("step values must be non-negative and non-decreasing")

    @classmethod
    def step_default(cls) -> "FeeSchedule":
        return cls(kind="step")

    def g(self, size):
        x = np.asarray(size, dtype=float)
        if self.kind == "constant":
            out = np.full_like(x, self.value)
        elif self.kind == "half-identity":
            out = 0.5 * x
        else:
            idx = np.zeros(x.shape, dtype=int)
            for b, inc in zip(self.breakpoints, self.inclusive):
                idx += (x >= b) if inc else (x > b)
            out = np.asarray(self.values)[idx]
        return out if out.ndim else float(out)

    def cost(self, size, spread):
        """Transaction cost ``g(|d|) * spread * |d|``; zero for a zero order."""
        size = np.abs(np.asarray(size, dtype=float))
        out = np.where(size > 0, self.g(size) * spread * size, 0.0)
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "constant":
            d["value"] = self.value
        if self.kind == "step":
            d.update(breakpoints=list(self.breakpoints), values=list(self.values), inclusive=list(self.inclusive))
        return d


@dataclass(frozen=True)
class EnvConfig:
    persistence: int = 10
    mode: str = DISCRETE
    fee: FeeSchedule = field(default_factory=FeeSchedule)
    max_exposure: float = 100_000.0
    warmup: int = N_DELTAS

    def __post_init__(self):
        if self.persistence < 1:
            raise ValueError("persistence must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")

    def decision_times(self, last: int) -> np.ndarray:
        """Decision minutes for an episode whose close bar is ``last``."""
        if self.warmup >= last:
            raise ValueError(f"warm-up {self.warmup} leaves no decision before close bar {last}")
        return np.arange(self.warmup, last, self.persistence)

    def next_times(self, last: int) -> np.ndarray:
        return np.minimum(self.decision_times(last) + self.persistence, last)


@dataclass(frozen=True)
class TradeAction:
    target: float

    def validate(self, mode: str) -> "TradeAction":
        validate_actions(np.array([self.target]), mode)
        return self


def validate_actions(actions: np.ndarray, mode: str) -> np.ndarray:
    a = np.asarray(actions, dtype=float)
    if not np.all(np.isfinite(a)) or np.any(np.abs(a) > 1):
        raise ValueError("invalid action: allocation outside [-1, 1]")
    if mode == DISCRETE and not np.all(np.isin(a, (-1.0, 0.0, 1.0))):
        raise ValueError("invalid action: discrete mode allows only -1, 0, 1")
    return a


def step(episode: Episode, t: int, x: float, a, cfg: EnvConfig) -> tuple[float, int, float, bool]:
    """Hold allocation ``a`` for ``persistence`` minutes from ``t``.

    Returns ``(reward, next_t, next_x, done)``; ``done`` means the next
    minute is the forced-close bar.
    """
    a = float(getattr(a, "target", a))
    validate_actions(np.array([a, x]), cfg.mode)
    if not 0 <= t < episode.last:
        raise IndexError(f"decision minute {t} outside [0, {episode.last})")
    t_next = min(t + cfg.persistence, episode.last)
    p = episode.mid
    reward = a * (p[t_next] - p[t]) - cfg.fee.cost(abs(a - x), episode.spread[t])
    return float(reward), t_next, a, t_next == episode.last


def force_close(x: float, sigma: float, fee: FeeSchedule) -> float:
    return -fee.cost(abs(x), sigma)


@dataclass
class TransitionSample:
    state: TradingState
    action: float
    reward: float
    next_state: TradingState
    done: bool
    forced: bool = False


@dataclass
class TransitionBatch:
    """Columnar batch dataset; row order is episode-major, then time."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    forced: np.ndarray
    episode: np.ndarray
    prev_alloc: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)

    def __getitem__(self, i: int) -> TransitionSample:
        return TransitionSample(
            TradingState.from_vector(self.states[i]),
            float(self.actions[i]),
            float(self.rewards[i]),
            TradingState.from_vector(self.next_states[i]),
            bool(self.dones[i]),
            bool(self.forced[i]),
        )

    def __iter__(self) -> Iterator[TransitionSample]:
        return (self[i] for i in range(len(self)))

    @property
    def minutes(self) -> np.ndarray:
        return self.states[:, MINUTE_IDX].astype(int)

    @property
    def order_sizes(self) -> np.ndarray:
        return np.abs(self.actions - self.prev_alloc)

    def with_rewards(self, rewards: np.ndarray) -> "TransitionBatch":
        rewards = np.asarray(rewards, dtype=float)
        if rewards.shape != self.rewards.shape:
            raise ValueError("reward vector has the wrong length")
        return TransitionBatch(self.states, self.actions, rewards, self.next_states, self.dones,
                               self.forced, self.episode, self.prev_alloc)

    def episode_returns(self) -> np.ndarray:
        n = int(self.episode.max()) + 1 if len(self) else 0
        return np.bincount(self.episode, weights=self.rewards, minlength=n)

    @classmethod
    def concat(cls, parts: Sequence["TransitionBatch"]) -> "TransitionBatch":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls.__dataclass_fields__))

    @classmethod
    def from_samples(cls, samples: Sequence[TransitionSample], episode=None) -> "TransitionBatch":
        n = len(samples)
        ep = np.zeros(n, dtype=int) if episode is None else np.asarray(episode, dtype=int)
        states = np.array([s.state.to_vector() for s in samples]).reshape(n, len(FEATURE_NAMES))
        return cls(
            states=states,
            actions=np.array([s.action for s in samples], dtype=float),
            rewards=np.array([s.reward for s in samples], dtype=float),
            next_states=np.array([s.next_state.to_vector() for s in samples]).reshape(n, len(FEATURE_NAMES)),
            dones=np.array([s.done for s in samples], dtype=bool),
            forced=np.array([s.forced for s in samples], dtype=bool),
            episode=ep,
            prev_alloc=states[:, ALLOCATION_IDX].copy(),
        )

    def to_csv(self, path: str | Path) -> None:
        names = list(FEATURE_NAMES)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", *names, "action", "reward", *(f"next_{n}" for n in names), "done", "forced"])
            for i in range(len(self)):
                w.writerow([int(self.episode[i]), *map(repr, self.states[i].tolist()), repr(float(self.actions[i])),
                            repr(float(self.rewards[i])), *map(repr, self.next_states[i].tolist()),
                            int(self.dones[i]), int(self.forced[i])])


def episode_uniforms(seed, episode_index: int, n: int) -> np.ndarray:
    """Independent uniform stream for one episode, derived from the master seed."""
    entropy = [int(s) for s in np.atleast_1d(seed)] + [int(episode_index)]
    return np.random.default_rng(np.random.SeedSequence(entropy)).random(n)


def _rollout_block(episodes: list[Episode], indices: list[int], policy, cfg: EnvConfig, seed, greedy: bool) -> TransitionBatch:
    last = episodes[0].last
    times = cfg.decision_times(last)
    nexts = cfg.next_times(last)
    n_ep, n_dec = len(episodes), len(times)
    if cfg.warmup < N_DELTAS:
        raise ValueError(f"rollouts need warmup >= {N_DELTAS} to fill the delta window")
    rel = [ep.relative_changes() for ep in episodes]
    base = np.stack([episode_features(ep, times, np.zeros(n_dec), r) for ep, r in zip(episodes, rel)])
    close_feat = np.stack([episode_features(ep, np.array([last]), np.zeros(1), r)[0] for ep, r in zip(episodes, rel)])
    u = None if greedy else np.stack([episode_uniforms(seed, i, n_dec) for i in indices])
    mids = np.stack([ep.mid for ep in episodes])
    spreads = np.stack([ep.spread for ep in episodes])

    x = np.zeros(n_ep)
    states = np.empty((n_ep, n_dec + 1, base.shape[2]))
    actions = np.empty((n_ep, n_dec + 1))
    prev = np.empty((n_ep, n_dec + 1))
    rewards = np.empty((n_ep, n_dec + 1))
    for j, (t, tn) in enumerate(zip(times, nexts)):
        s = base[:, j, :].copy()
        s[:, ALLOCATION_IDX] = x
        a = policy.greedy(s) if greedy else policy.sample(s, u[:, j])
        a = validate_actions(a, cfg.mode)
        rewards[:, j] = a * (mids[:, tn] - mids[:, t]) - cfg.fee.cost(np.abs(a - x), spreads[:, t])
        states[:, j], actions[:, j], prev[:, j] = s, a, x
        x = a
    s = close_feat.copy()
    s[:, ALLOCATION_IDX] = x
    states[:, n_dec], actions[:, n_dec], prev[:, n_dec] = s, 0.0, x
    rewards[:, n_dec] = -cfg.fee.cost(np.abs(x), spreads[:, last])

    next_states = np.empty_like(states)
    next_states[:, :-1] = states[:, 1:]
    next_states[:, -1] = states[:, -1]
    next_states[:, -1, ALLOCATION_IDX] = 0.0
    dones = np.zeros((n_ep, n_dec + 1), dtype=bool)
    dones[:, -1] = True
    forced = dones.copy()
    F = states.shape[2]
    return TransitionBatch(
        states=states.reshape(-1, F),
        actions=actions.ravel(),
        rewards=rewards.ravel(),
        next_states=next_states.reshape(-1, F),
        dones=dones.ravel(),
        forced=forced.ravel(),
        episode=np.repeat(np.asarray(indices), n_dec + 1),
        prev_alloc=prev.ravel(),
    )


def _blocks(series: MarketSeries) -> list[list[int]]:
    blocks, cur = [], []
    for i, ep in enumerate(series.episodes):
        if cur and (len(cur) == ROLLOUT_BLOCK or len(series.episodes[cur[0]]) != len(ep)):
            blocks.append(cur)
            cur = []
        cur.append(i)
    if cur:
        blocks.append(cur)
    return blocks


def rollout(series: MarketSeries, policy, cfg: EnvConfig, seed=0, greedy: bool = False, workers: int = 1) -> TransitionBatch:
    """Simulate every episode of ``series`` under ``policy``.

    Each episode draws from its own RNG stream derived from ``(seed, episode
    index)``, and episodes are batched in fixed blocks, so the result does not
    depend on ``workers``.
    """
    if isinstance(policy, PolicyParameters) and policy.mode != cfg.mode:
        raise ValueError(f"policy mode {policy.mode!r} does not match environment mode {cfg.mode!r}")
    if len(series) == 0:
        raise ValueError("empty market series")
    blocks = _blocks(series)
    run = lambda idx: _rollout_block([series.episodes[i] for i in idx], idx, policy, cfg, seed, greedy)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    return TransitionBatch.concat(parts)
