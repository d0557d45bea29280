"""The fitted natural actor-critic loop and two-stage model selection."""
from __future__ import annotations

import csv
import dataclasses
import itertools
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import actor, advantage, risk
from .critic import BoostedEnsemble, CriticConfig, fit_value
from .env import EnvConfig, rollout
from .marketdata import MarketSeries

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 100
    alpha: float = 1.0
    ridge: float = 1.0
    weighting: str = "uniform"
    rollout_seed_base: int = 0
    eval_every: int = 1
    early_stop: int = 10  # patience in evaluations; 0 disables
    hidden: tuple[int, ...] | None = None
    s_min: float = 1e-2
    workers: int = 1
    env: EnvConfig = field(default_factory=EnvConfig)
    risk: risk.RiskSpec = field(default_factory=risk.RiskSpec)
    critic: CriticConfig = field(default_factory=CriticConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.weighting not in advantage.WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.hidden is not None:
            object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def mode(self) -> str:
        return self.env.mode

    @property
    def persistence(self) -> int:
        return self.env.persistence

    def arch(self) -> actor.PolicyArch:
        return actor.PolicyArch.default(self.mode, self.hidden, s_min=self.s_min)


def override(cfg: Any, path: str, value: Any) -> Any:
    """Return a copy of nested frozen dataclass ``cfg`` with dotted ``path`` set."""
    head, _, rest = path.partition(".")
    if not dataclasses.is_dataclass(cfg) or head not in {f.name for f in dataclasses.fields(cfg)}:
        raise KeyError(f"unknown config key {path!r}")
    if rest:
        value = override(getattr(cfg, head), rest, value)
    return dataclasses.replace(cfg, **{head: value})


REPORT_COLUMNS = ("iteration", "train_return", "valid_return", "w_norm", "critic_mse", "rho", "J",
                  "solve_residual", "solver_fallback")


@dataclass
class IterationRecord:
    iteration: int
    train_return: float
    valid_return: float
    w_norm: float
    critic_mse: float
    rho: float
    J: float
    solve_residual: float
    solver_fallback: bool
    wall_clock: float


@dataclass
class TrainReport:
    records: list[IterationRecord] = field(default_factory=list)
    best_iteration: int = 0
    best_valid_return: float = float("-inf")

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self, path: str | Path) -> None:
        """Deterministic per-iteration log; wall-clock goes to :meth:`timing_csv`."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.records:
                w.writerow([r.iteration, *(repr(float(getattr(r, c))) for c in REPORT_COLUMNS[1:-1]), int(r.solver_fallback)])

    def timing_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "seconds"])
            for r in self.records:
                w.writerow([r.iteration, f"{r.wall_clock:.4f}"])


def evaluate(series: MarketSeries, policy, cfg: TrainConfig, est: risk.RiskEstimates | None = None) -> float:
    """Mean greedy episode return; risk-transformed with frozen estimates when a risk spec is active."""
    data = rollout(series, policy, cfg.env, greedy=True, workers=cfg.workers)
    if cfg.risk.active and est is not None:
        data = data.with_rewards(risk.apply(cfg.risk, data.rewards, est))
    return float(np.mean(data.episode_returns()))


def train(train_series: MarketSeries, valid_series: MarketSeries, cfg: TrainConfig, seed: int = 0,
          init: actor.PolicyParameters | None = None):
    """Run FNAC; returns ``(policy, critic, report)`` for the best validation checkpoint."""
    if len(train_series) == 0 or len(valid_series) == 0:
        raise ValueError("training and validation series must be non-empty")
    policy = init if init is not None else actor.init_params(cfg.arch(), seed)
    critic: BoostedEnsemble | None = None
    report = TrainReport()
    best = (policy, None)
    since_best = 0
    for it in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        data = rollout(train_series, policy, cfg.env, seed=(seed, cfg.rollout_seed_base, it), workers=cfg.workers)
        train_return = float(np.mean(data.episode_returns()))
        est = risk.estimate(cfg.risk, data.rewards)
        if cfg.risk.active:
            data = data.with_rewards(risk.apply(cfg.risk, data.rewards, est))
        critic = fit_value(data, critic, cfg.critic, seed=(seed, it))
        design = advantage.build_design(data, policy, critic, cfg.weighting)
        grad = advantage.solve(design, cfg.ridge)
        if not np.all(np.isfinite(grad.w)):
            raise TrainingDiverged(f"iteration {it}: non-finite natural gradient (residual {grad.residual_norm})")
        policy = actor.natural_update(policy, grad, cfg.alpha)

        valid_return = float("nan")
        stop = False
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            valid_return = evaluate(valid_series, policy, cfg, est)
            if valid_return > report.best_valid_return:
                report.best_valid_return, report.best_iteration = valid_return, it
                best = (policy, critic)
                since_best = 0
            else:
                since_best += 1
                stop = cfg.early_stop > 0 and since_best >= cfg.early_stop
        report.records.append(IterationRecord(
            iteration=it, train_return=train_return, valid_return=valid_return, w_norm=grad.norm,
            critic_mse=float(critic.train_mse), rho=est.rho, J=est.J, solve_residual=grad.residual_norm,
            solver_fallback=grad.fallback, wall_clock=time.perf_counter() - t0,
        ))
        logger.info("iter %d train %.6g valid %.6g |w| %.4g", it, train_return, valid_return, grad.norm)
        if stop:
            logger.info("early stop at iteration %d (best %d)", it, report.best_iteration)
            break
    if best[1] is None:
        best = (policy, critic)
    return best[0], best[1], report


STAGE1_PREFIXES = ("critic.", "ridge")


@dataclass
class SelectionResult:
    best: TrainConfig
    table: list[dict]

    def to_csv(self, path: str | Path) -> None:
        keys = sorted({k for row in self.table for k in row["params"]})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stage", *keys, "score"])
            for row in self.table:
                w.writerow([row["stage"], *(row["params"].get(k, "") for k in keys), repr(float(row["score"]))])


def _combos(grid: dict[str, list]) -> list[dict]:
    keys = list(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def _apply(cfg: TrainConfig, params: dict) -> TrainConfig:
    for k, v in params.items():
        if k == "hidden" and v is not None:
            v = tuple(v)
        cfg = override(cfg, k, v)
    return cfg


def select_model(grid: dict[str, list], split: tuple[MarketSeries, MarketSeries, MarketSeries],
                 template: TrainConfig, seed: int = 0) -> SelectionResult:
    """Two-stage grid search.

    Stage 1 tunes ``critic.*`` and ``ridge`` keys on the first validation set;
    stage 2 tunes the remaining keys (step size, hidden sizes, persistence...)
    on the second, starting from the stage-1 winner. Score is the best
    validation return reached during training.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("empty hyperparameter grid")
    train_s, valid_critic, valid_actor = split
    stage1 = {k: v for k, v in grid.items() if k.startswith(STAGE1_PREFIXES)}
    stage2 = {k: v for k, v in grid.items() if k not in stage1}
    table = []
    best_cfg = template
    for stage, sub, valid in ((1, stage1, valid_critic), (2, stage2, valid_actor)):
        if not sub:
            continue
        scored = []
        for params in _combos(sub):
            cfg = _apply(best_cfg, params)
            _, _, rep = train(train_s, valid, cfg, seed)
            scored.append((rep.best_valid_return, cfg))
            table.append({"stage": stage, "params": params, "score": rep.best_valid_return})
            logger.info("stage %d %s -> %.6g", stage, params, rep.best_valid_return)
        top = max(s for s, _ in scored)
        best_cfg = next(c for s, c in scored if s == top)
    return SelectionResult(best_cfg, table)
