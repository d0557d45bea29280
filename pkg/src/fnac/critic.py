"""Gradient-boosted regression trees used as the state-value critic.

Splits are found by exact greedy search over sorted feature values with
squared-error-reduction gain. Ties go to the lowest feature index, then the
lowest threshold, so a fit is fully determined by its data.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .marketdata import FEATURE_NAMES, N_FEATURES

# relative slack when comparing split gains, so summation-order noise cannot flip a tie
_TIE_RTOL = 1e-9


@dataclass(frozen=True)
class CriticConfig:
    rounds: int = 30
    trees_per_round: int = 1
    min_child_weight: int = 5
    max_depth: int = 4
    shrinkage: float = 0.3
    subsample: float = 1.0
    sweeps: int = 3
    reg_lambda: float = 0.0
    reg_gamma: float = 0.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.trees_per_round < 1:
            raise ValueError("trees_per_round must be >= 1")
        if not 0 < self.shrinkage <= 1:
            raise ValueError("shrinkage must lie in (0, 1]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")
        if self.min_child_weight < 1 or self.max_depth < 0 or self.sweeps < 1:
            raise ValueError("min_child_weight and sweeps must be >= 1, max_depth >= 0")
        if self.reg_lambda < 0 or self.reg_gamma < 0:
            raise ValueError("regularisation terms must be non-negative")


@dataclass
class Tree:
    """Flat array encoding; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @cached_property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        rows = np.arange(len(X))
        for _ in range(self.depth):
            f = self.feature[node]
            inner = f >= 0
            go_left = X[rows, np.where(inner, f, 0)] < self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)
        return self.value[node]

    def to_dict(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "gain": float(self.gain[i]),
            "left": self.to_dict(int(self.left[i])),
            "right": self.to_dict(int(self.right[i])),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        nodes: list[list] = []

        def visit(node):
            i = len(nodes)
            nodes.append([-1, 0.0, -1, -1, 0.0, 0.0])
            if "leaf" in node:
                nodes[i][4] = node["leaf"]
            else:
                left, right = visit(node["left"]), visit(node["right"])
                nodes[i] = [node["feature"], node["threshold"], left, right, 0.0, node.get("gain", 0.0)]
            return i

        visit(d)
        cols = list(zip(*nodes))
        return cls(np.array(cols[0], int), np.array(cols[1], float), np.array(cols[2], int),
                   np.array(cols[3], int), np.array(cols[4], float), np.array(cols[5], float))

    @classmethod
    def stump(cls, feature: int, threshold: float, left: float, right: float, gain: float = 1.0) -> "Tree":
        return cls(np.array([feature, -1, -1]), np.array([threshold, 0.0, 0.0]), np.array([1, -1, -1]),
                   np.array([2, -1, -1]), np.array([0.0, left, right]), np.array([gain, 0.0, 0.0]))


@dataclass
class BoostedEnsemble:
    trees: list[Tree] = field(default_factory=list)
    base: float = 0.0
    shrinkage: float = 1.0
    train_mse: float | None = None

    def predict(self, X) -> np.ndarray:
        X = np.asarray(getattr(X, "to_vector", lambda: X)(), dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        out = np.full(len(X), self.base)
        if self.trees:
            out += self.shrinkage * sum(t.predict(X) for t in self.trees)
        return out[0] if single else out

    __call__ = predict

    def to_dict(self) -> dict:
        return {"format": "fnac-critic/1", "base": self.base, "shrinkage": self.shrinkage,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedEnsemble":
        return cls([Tree.from_dict(t) for t in d["trees"]], d["base"], d["shrinkage"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "BoostedEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict(ensemble: BoostedEnsemble, state) -> float | np.ndarray:
    return ensemble.predict(state)


class _TreeBuilder:
    def __init__(self, X: np.ndarray, cfg: CriticConfig):
        self.X = X
        self.XT = np.ascontiguousarray(X.T)
        self.order = np.argsort(self.XT, axis=1, kind="stable")
        self.cfg = cfg

    def fit(self, y: np.ndarray, rows: np.ndarray | None, min_gain: float) -> Tree:
        self.y = y
        self.min_gain = min_gain
        n = len(y)
        if rows is None:
            node_order = self.order
        else:
            mask = np.zeros(n, dtype=bool)
            mask[rows] = True
            node_order = self.order[mask[self.order]].reshape(self.order.shape[0], -1)
        self.nodes: list[list] = []
        self._grow(node_order, 0)
        cols = list(zip(*self.nodes))
        return Tree(np.array(cols[0], int), np.array(cols[1], float), np.array(cols[2], int),
                    np.array(cols[3], int), np.array(cols[4], float), np.array(cols[5], float))

    def _grow(self, node_order: np.ndarray, depth: int) -> int:
        cfg = self.cfg
        i = len(self.nodes)
        m = node_order.shape[1]
        ys = self.y[node_order[0]]
        total = ys.sum()
        self.nodes.append([-1, 0.0, -1, -1, total / (m + cfg.reg_lambda), 0.0])
        mcw = cfg.min_child_weight
        if depth >= cfg.max_depth or m < 2 * mcw:
            return i
        ys = self.y[node_order]
        xs = np.take_along_axis(self.XT, node_order, axis=1)
        cs = np.cumsum(ys, axis=1)
        S = cs[:, -1:]
        n_left = np.arange(1, m)
        SL = cs[:, :-1]
        SR = S - SL
        lam = cfg.reg_lambda
        gain = SL**2 / (n_left + lam) + SR**2 / (m - n_left + lam) - S**2 / (m + lam)
        valid = xs[:, :-1] < xs[:, 1:]
        valid[:, : mcw - 1] = False
        valid[:, m - mcw :] = False
        gain = np.where(valid, gain, -np.inf)
        best = gain.max()
        if not np.isfinite(best) or best <= cfg.reg_gamma + self.min_gain:
            return i
        f, pos = divmod(int(np.argmax(gain >= best - _TIE_RTOL * abs(best))), m - 1)
        lo, hi = xs[f, pos], xs[f, pos + 1]
        thr = 0.5 * (lo + hi)
        if not lo < thr <= hi:
            thr = hi
        go_left = np.zeros(self.X.shape[0], dtype=bool)
        rows = node_order[f]
        go_left[rows[: pos + 1]] = True
        left_order = node_order[go_left[node_order]].reshape(node_order.shape[0], pos + 1)
        right_order = node_order[~go_left[node_order]].reshape(node_order.shape[0], m - pos - 1)
        left = self._grow(left_order, depth + 1)
        right = self._grow(right_order, depth + 1)
        self.nodes[i] = [f, thr, left, right, 0.0, float(gain[f, pos])]
        return i


def boost(X: np.ndarray, y: np.ndarray, cfg: CriticConfig, rng: np.random.Generator | None = None) -> BoostedEnsemble:
    """Fit a boosted ensemble to ``(X, y)`` under squared loss."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("cannot fit a critic on an empty dataset")
    rng = rng or np.random.default_rng(0)
    n = len(y)
    base = float(y.mean())
    pred = np.full(n, base)
    builder = _TreeBuilder(X, cfg)
    min_gain = 1e-14 * float(np.dot(y - base, y - base)) + 1e-300
    n_sub = max(1, int(round(cfg.subsample * n)))
    trees = []
    for _ in range(cfg.rounds):
        resid = y - pred
        round_trees = []
        for _ in range(cfg.trees_per_round):
            rows = None if n_sub == n else np.sort(rng.choice(n, size=n_sub, replace=False))
            tree = builder.fit(resid, rows, min_gain)
            tree.value = tree.value / cfg.trees_per_round
            round_trees.append(tree)
        pred = pred + cfg.shrinkage * sum(t.predict(X) for t in round_trees)
        trees.extend(round_trees)
    resid = y - pred
    return BoostedEnsemble(trees, base, cfg.shrinkage, train_mse=float(np.mean(resid**2)))


def _check_finite(name: str, arr: np.ndarray) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise ValueError(f"non-finite {name} in sample {row}")


def bellman_targets(dataset, prev: BoostedEnsemble | None, gamma: float = 1.0) -> np.ndarray:
    r = np.asarray(dataset.rewards, dtype=float)
    if prev is None:
        return r.copy()
    cont = ~np.asarray(dataset.dones, dtype=bool)
    v_next = np.zeros(len(r))
    if cont.any():
        v_next[cont] = prev.predict(dataset.next_states[cont])
    return r + gamma * v_next


def fit_value(dataset, prev: BoostedEnsemble | None, cfg: CriticConfig, seed=0) -> BoostedEnsemble:
    """Fit V by repeated regression on refreshed Bellman targets (undiscounted)."""
    if len(dataset) == 0:
        raise ValueError("cannot fit a critic on an empty dataset")
    _check_finite("state features", dataset.states)
    _check_finite("next-state features", dataset.next_states)
    _check_finite("reward", dataset.rewards)
    rng = np.random.default_rng(np.random.SeedSequence([int(s) for s in np.atleast_1d(seed)]))
    for _ in range(cfg.sweeps):
        y = bellman_targets(dataset, prev)
        prev = boost(dataset.states, y, cfg, rng)
    return prev


@dataclass(frozen=True)
class FeatureImportance:
    values: np.ndarray
    degenerate: bool = False
    names: tuple[str, ...] = FEATURE_NAMES

    def ranking(self) -> list[str]:
        return [self.names[i] for i in np.argsort(-self.values, kind="stable")]

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])


def feature_importance(ensemble: BoostedEnsemble, n_features: int = N_FEATURES) -> FeatureImportance:
    """Share of total split gain contributed by each feature."""
    gains = np.zeros(n_features)
    for t in ensemble.trees:
        inner = t.feature >= 0
        np.add.at(gains, t.feature[inner], t.gain[inner])
    names = FEATURE_NAMES if n_features == N_FEATURES else tuple(f"f{i}" for i in range(n_features))
    total = gains.sum()
    if total <= 0:
        return FeatureImportance(np.zeros(n_features), degenerate=True, names=names)
    return FeatureImportance(gains / total, names=names)
