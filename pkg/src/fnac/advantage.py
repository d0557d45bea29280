"""Compatible-basis advantage regression.

The weighted least-squares coefficients of the TD residuals on the policy
score vectors are the natural gradient of the expected return.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import actor

logger = logging.getLogger(__name__)

WEIGHTINGS = ("uniform", "empirical")
EIG_CUTOFF = 1e-10


@dataclass
class CompatibleDesign:
    rows: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        n = self.rows.shape[0]
        if self.targets.shape != (n,) or self.weights.shape != (n,):
            raise ValueError("rows, targets and weights must agree in length")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")

    @property
    def n_params(self) -> int:
        return self.rows.shape[1]

    def normal_equations(self) -> tuple[np.ndarray, np.ndarray]:
        """``M = sum w phi phi^T`` and ``b = sum w phi delta``."""
        wr = self.rows * self.weights[:, None]
        return wr.T @ self.rows, wr.T @ self.targets


@dataclass
class NaturalGradient:
    w: np.ndarray
    residual_norm: float = 0.0
    condition: float = 1.0
    ridge: float = 0.0
    fallback: bool = False
    degenerate: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.w))


def td_residuals(dataset, critic, gamma: float = 1.0) -> np.ndarray:
    v = critic.predict(dataset.states)
    v_next = critic.predict(dataset.next_states)
    return dataset.rewards + gamma * v_next * (~dataset.dones) - v


def visitation_weights(dataset) -> np.ndarray:
    """Inverse visitation frequency of each (episode, minute) pair, mean-normalised."""
    keys = dataset.episode.astype(np.int64) * 100_000 + dataset.minutes
    _, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    c = counts[inverse].astype(float)
    return c.mean() / c


def build_design(dataset, policy: actor.PolicyParameters, critic, weighting: str = "uniform") -> CompatibleDesign:
    """Score vectors, TD residuals and weights for the policy-chosen transitions.

    Forced-close transitions are excluded: their action is not drawn from the
    policy, so they carry no score.
    """
    if weighting not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {weighting!r}")
    keep = ~np.asarray(dataset.forced, dtype=bool)
    resid = td_residuals(dataset, critic)[keep]
    rows = actor.grad_log_prob_batch(policy, dataset.states[keep], dataset.actions[keep])
    if weighting == "uniform":
        weights = np.ones(len(resid))
    else:
        weights = visitation_weights(dataset)[keep]
    return CompatibleDesign(rows, resid, weights)


def solve(design: CompatibleDesign, ridge: float = 0.0) -> NaturalGradient:
    """Solve ``(M + ridge I) w = b`` by Cholesky, falling back to a truncated eigen-solve."""
    if ridge < 0:
        raise ValueError("ridge coefficient must be non-negative")
    P = design.n_params
    if P == 0:
        raise ValueError("design has no parameters")
    if design.rows.shape[0] == 0:
        raise ValueError("design has no samples")
    M, b = design.normal_equations()
    A = M + ridge * np.eye(P)
    if not np.any(A):
        return NaturalGradient(np.zeros(P), float(np.linalg.norm(b)), np.inf, ridge, degenerate=True)
    fallback = False
    try:
        c, low = linalg.cho_factor(A, lower=True, check_finite=True)
        w = linalg.cho_solve((c, low), b)
        d = np.diag(c)
        cond = float((d.max() / d.min()) ** 2)
        if not np.all(np.isfinite(w)):
            raise linalg.LinAlgError("non-finite Cholesky solution")
    except linalg.LinAlgError:
        fallback = True
        vals, vecs = linalg.eigh(A)
        top = vals.max()
        keep = vals > EIG_CUTOFF * top
        w = vecs[:, keep] @ ((vecs[:, keep].T @ b) / vals[keep])
        cond = float(top / vals[keep].min()) if keep.any() else np.inf
        logger.warning("Cholesky failed; pseudo-inverse kept %d of %d directions", keep.sum(), P)
    resid = float(np.linalg.norm(A @ w - b))
    return NaturalGradient(w, resid, cond, ridge, fallback=fallback)


def empirical_fisher(scores: np.ndarray) -> np.ndarray:
    """Sample mean of score outer products, accumulated one sample at a time."""
    scores = np.atleast_2d(scores)
    F = np.zeros((scores.shape[1], scores.shape[1]))
    for s in scores:
        F += np.outer(s, s)
    return F / len(scores)
