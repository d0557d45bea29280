"""Reward transformations for risk-averse training (RCVaR and mean-volatility)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RISK_KINDS = ("neutral", "rcvar", "mean_volatility")
RHO_MODES = ("empirical", "fixed")


@dataclass(frozen=True)
class RiskSpec:
    """Which transform to apply and its knobs.

    ``scale`` converts per-unit-notional rewards into the currency units the
    penalty parameters are expressed in (rewards are multiplied by ``scale``
    before transforming and divided afterwards). A fixed ``rho`` is given in
    those scaled units.
    """

    kind: str = "neutral"
    alpha: float = 1.0
    rho_mode: str = "empirical"
    rho: float = 0.0
    lam: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in RISK_KINDS:
            raise ValueError(f"unknown risk kind {self.kind!r}")
        if self.rho_mode not in RHO_MODES:
            raise ValueError(f"unknown rho mode {self.rho_mode!r}")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def active(self) -> bool:
        return self.kind != "neutral"


def _rewards(dataset) -> np.ndarray:
    r = np.asarray(getattr(dataset, "rewards", dataset), dtype=float)
    if r.size == 0:
        raise ValueError("empty dataset")
    return r


def estimate_rho(dataset, alpha: float) -> float:
    """Empirical alpha-quantile of the per-step rewards (linear interpolation)."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    return float(np.quantile(_rewards(dataset), alpha, method="linear"))


def estimate_J(dataset) -> float:
    return float(np.mean(_rewards(dataset)))


def transform_rcvar(r, rho: float, alpha: float):
    """``rho - max(rho - r, 0) / alpha``: capped at rho, losses below it amplified."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    return rho - np.maximum(rho - np.asarray(r, dtype=float), 0.0) / alpha


def transform_mean_volatility(r, J: float, lam: float):
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    r = np.asarray(r, dtype=float)
    return r - lam * (r - J) ** 2


@dataclass(frozen=True)
class RiskEstimates:
    rho: float = float("nan")
    J: float = float("nan")


def estimate(spec: RiskSpec, rewards) -> RiskEstimates:
    """One-pass estimates (in scaled units) that are frozen for an iteration."""
    r = _rewards(rewards) * spec.scale
    if spec.kind == "rcvar":
        rho = spec.rho if spec.rho_mode == "fixed" else estimate_rho(r, spec.alpha)
        return RiskEstimates(rho=rho)
    if spec.kind == "mean_volatility":
        return RiskEstimates(J=estimate_J(r))
    return RiskEstimates()


def apply(spec: RiskSpec, rewards, est: RiskEstimates) -> np.ndarray:
    """Transform per-step rewards; the neutral spec returns them unchanged."""
    r = np.asarray(rewards, dtype=float)
    if spec.kind == "neutral":
        return r
    scaled = r * spec.scale
    if spec.kind == "rcvar":
        out = transform_rcvar(scaled, est.rho, spec.alpha)
    else:
        out = transform_mean_volatility(scaled, est.J, spec.lam)
    return out / spec.scale
