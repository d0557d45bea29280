"""Feed-forward policies with analytic log-density gradients.

Discrete mode: one tanh hidden layer, softmax over the allocations
(-1, 0, 1). Continuous mode: two tanh hidden layers feeding a mean head
(tanh-squashed) and a std head (``s_min + softplus``) of a normal
truncated to [-1, 1].

Parameters live in one flat vector; each layer stores its weight matrix
(out x in, row-major) followed by its bias.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .marketdata import N_DELTAS, N_FEATURES, SPREAD_IDX, WEEKDAY_IDX, MINUTE_IDX, ALLOCATION_IDX, TradingState

DISCRETE = "discrete"
CONTINUOUS = "continuous"
MODES = (DISCRETE, CONTINUOUS)
DISCRETE_ACTIONS = np.array([-1.0, 0.0, 1.0])
BOUNDARY_EPS = 1e-9
_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)

DEFAULT_INPUT_SCALE = {
    "deltas": 1e3,
    "spread": 1e4,
    "weekday": 1 / 6,
    "minute": 1 / 600,
    "allocation": 1.0,
}


@dataclass(frozen=True)
class PolicyArch:
    mode: str = DISCRETE
    hidden: tuple[int, ...] = (32,)
    s_min: float = 1e-2
    input_scale: dict = field(default_factory=lambda: dict(DEFAULT_INPUT_SCALE))

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown policy mode {self.mode!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        need = 1 if self.mode == DISCRETE else 2
        if len(self.hidden) != need:
            raise ValueError(f"{self.mode} policy needs {need} hidden layer(s), got {self.hidden}")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden sizes must be positive")
        if self.mode == CONTINUOUS and not self.s_min > 0:
            raise ValueError("s_min must be positive")
        missing = set(DEFAULT_INPUT_SCALE) - set(self.input_scale)
        if missing:
            raise ValueError(f"input_scale missing {sorted(missing)}")

    @classmethod
    def default(cls, mode: str, hidden=None, **kw) -> "PolicyArch":
        if hidden is None:
            hidden = (32,) if mode == DISCRETE else (32, 32)
        return cls(mode=mode, hidden=tuple(hidden), **kw)

    @property
    def n_out(self) -> int:
        return 3 if self.mode == DISCRETE else 2

    @property
    def sizes(self) -> list[int]:
        return [N_FEATURES, *self.hidden, self.n_out]

    @property
    def n_params(self) -> int:
        s = self.sizes
        return sum(s[i + 1] * s[i] + s[i + 1] for i in range(len(s) - 1))

    def layer_slices(self) -> list[tuple[slice, slice, tuple[int, int]]]:
        out, pos, s = [], 0, self.sizes
        for i in range(len(s) - 1):
            n_in, n_out = s[i], s[i + 1]
            w = slice(pos, pos + n_in * n_out)
            pos += n_in * n_out
            b = slice(pos, pos + n_out)
            pos += n_out
            out.append((w, b, (n_out, n_in)))
        return out

    def scale_vector(self) -> np.ndarray:
        sc = np.empty(N_FEATURES)
        sc[:N_DELTAS] = self.input_scale["deltas"]
        sc[SPREAD_IDX] = self.input_scale["spread"]
        sc[WEEKDAY_IDX] = self.input_scale["weekday"]
        sc[MINUTE_IDX] = self.input_scale["minute"]
        sc[ALLOCATION_IDX] = self.input_scale["allocation"]
        return sc

    def to_dict(self) -> dict:
        return {"mode": self.mode, "hidden": list(self.hidden), "s_min": self.s_min, "input_scale": dict(self.input_scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyArch":
        return cls(mode=d["mode"], hidden=tuple(d["hidden"]), s_min=d.get("s_min", 1e-2),
                   input_scale=dict(d.get("input_scale", DEFAULT_INPUT_SCALE)))


@dataclass(frozen=True, eq=False)
class PolicyParameters:
    theta: np.ndarray
    arch: PolicyArch

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.arch.n_params,):
            raise ValueError(f"theta has {theta.size} entries, architecture needs {self.arch.n_params}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def mode(self) -> str:
        return self.arch.mode

    @property
    def n_params(self) -> int:
        return self.arch.n_params

    def with_theta(self, theta) -> "PolicyParameters":
        return PolicyParameters(theta, self.arch)

    # duck-typed policy interface used by rollouts
    def sample(self, X: np.ndarray, u: np.ndarray) -> np.ndarray:
        return sample_batch(self, X, u)

    def greedy(self, X: np.ndarray) -> np.ndarray:
        return greedy_batch(self, X)

    def to_dict(self) -> dict:
        return {"format": "fnac-policy/1", "arch": self.arch.to_dict(), "theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyParameters":
        return cls(np.array(d["theta"], dtype=float), PolicyArch.from_dict(d["arch"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "PolicyParameters":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PolicyOutput:
    probs: np.ndarray | None = None
    mean: float | None = None
    std: float | None = None


def init_params(arch: PolicyArch, seed: int) -> PolicyParameters:
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(arch.n_params)
    for w, _, (n_out, n_in) in arch.layer_slices():
        bound = 1.0 / np.sqrt(n_in)
        theta[w] = rng.uniform(-bound, bound, size=n_out * n_in)
    return PolicyParameters(theta, arch)


def zero_params(arch: PolicyArch) -> PolicyParameters:
    return PolicyParameters(np.zeros(arch.n_params), arch)


def _layers(params: PolicyParameters):
    th = params.theta
    return [(th[w].reshape(shape), th[b]) for w, b, shape in params.arch.layer_slices()]


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, TradingState):
        X = X.to_vector()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != N_FEATURES:
        raise ValueError(f"states must have {N_FEATURES} features")
    return X


def _network(params: PolicyParameters, X: np.ndarray):
    if not np.all(np.isfinite(params.theta)):
        raise ValueError("policy parameters contain non-finite values")
    z = X * params.arch.scale_vector()
    acts = [z]
    layers = _layers(params)
    for W, b in layers[:-1]:
        z = np.tanh(z @ W.T + b)
        acts.append(z)
    W, b = layers[-1]
    return z @ W.T + b, acts, layers


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _heads(params, out):
    mean = np.tanh(out[:, 0])
    std = params.arch.s_min + _softplus(out[:, 1])
    return mean, std


def forward_batch(params: PolicyParameters, X) -> PolicyOutput:
    X = _as_matrix(X)
    out, _, _ = _network(params, X)
    if params.mode == DISCRETE:
        return PolicyOutput(probs=_softmax(out))
    mean, std = _heads(params, out)
    return PolicyOutput(mean=mean, std=std)


def forward(params: PolicyParameters, state) -> PolicyOutput:
    res = forward_batch(params, state)
    if params.mode == DISCRETE:
        return PolicyOutput(probs=res.probs[0])
    return PolicyOutput(mean=float(res.mean[0]), std=float(res.std[0]))


def action_index(actions) -> np.ndarray:
    """Map discrete allocations -1/0/1 to output indices 0/1/2."""
    a = np.asarray(actions, dtype=float)
    idx = np.rint(a).astype(int) + 1
    if np.any(np.abs(a - DISCRETE_ACTIONS[np.clip(idx, 0, 2)]) > 0) or np.any((idx < 0) | (idx > 2)):
        raise ValueError("discrete actions must be -1, 0 or 1")
    return idx


def _check_continuous(actions) -> np.ndarray:
    a = np.asarray(actions, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(np.abs(a) > 1):
        raise ValueError("continuous actions must lie in [-1, 1]")
    return np.clip(a, -1 + BOUNDARY_EPS, 1 - BOUNDARY_EPS)


def truncnorm_log_normalizer(mean, std, lo=-1.0, hi=1.0):
    """log(Phi(beta) - Phi(alpha)) with alpha=(lo-mean)/std, beta=(hi-mean)/std."""
    alpha = (lo - mean) / std
    beta = (hi - mean) / std
    la, lb = log_ndtr(alpha), log_ndtr(beta)
    return lb + np.log1p(-np.exp(la - lb))


def truncnorm_logpdf(a, mean, std, lo=-1.0, hi=1.0):
    z = (a - mean) / std
    return -0.5 * z * z - _LOG_SQRT_2PI - np.log(std) - truncnorm_log_normalizer(mean, std, lo, hi)


def truncnorm_mean(mean, std, lo=-1.0, hi=1.0):
    alpha = (lo - mean) / std
    beta = (hi - mean) / std
    Z = ndtr(beta) - ndtr(alpha)
    pdf = lambda x: np.exp(-0.5 * x * x - _LOG_SQRT_2PI)
    return mean + std * (pdf(alpha) - pdf(beta)) / Z


def truncnorm_ppf(u, mean, std, lo=-1.0, hi=1.0):
    alpha = (lo - mean) / std
    beta = (hi - mean) / std
    ca, cb = ndtr(alpha), ndtr(beta)
    return mean + std * ndtri(ca + u * (cb - ca))


def log_prob_batch(params: PolicyParameters, X, actions) -> np.ndarray:
    X = _as_matrix(X)
    out, _, _ = _network(params, X)
    if params.mode == DISCRETE:
        idx = action_index(actions)
        logp = out - np.logaddexp.reduce(out, axis=1, keepdims=True)
        return logp[np.arange(len(idx)), idx]
    a = _check_continuous(actions)
    mean, std = _heads(params, out)
    return truncnorm_logpdf(a, mean, std)


def log_prob(params: PolicyParameters, state, action) -> float:
    return float(log_prob_batch(params, state, np.atleast_1d(action))[0])


def _output_grad(params, out, actions) -> np.ndarray:
    """d log pi / d (output-layer pre-activations), shape (N, n_out)."""
    if params.mode == DISCRETE:
        idx = action_index(actions)
        g = -_softmax(out)
        g[np.arange(len(idx)), idx] += 1.0
        return g
    a = _check_continuous(actions)
    mean, std = _heads(params, out)
    alpha = (-1.0 - mean) / std
    beta = (1.0 - mean) / std
    Z = np.exp(truncnorm_log_normalizer(mean, std))
    pa = np.exp(-0.5 * alpha**2 - _LOG_SQRT_2PI)
    pb = np.exp(-0.5 * beta**2 - _LOG_SQRT_2PI)
    dev = a - mean
    d_mean = dev / std**2 - (pa - pb) / (std * Z)
    d_std = -1.0 / std + dev**2 / std**3 - (alpha * pa - beta * pb) / (std * Z)
    g = np.empty_like(out)
    g[:, 0] = d_mean * (1.0 - mean**2)
    g[:, 1] = d_std / (1.0 + np.exp(-out[:, 1]))
    return g


def grad_log_prob_batch(params: PolicyParameters, X, actions) -> np.ndarray:
    """Per-sample gradients of log pi w.r.t. theta, shape (N, P)."""
    X = _as_matrix(X)
    out, acts, layers = _network(params, X)
    delta = _output_grad(params, out, actions)
    n = X.shape[0]
    grads = np.empty((n, params.n_params))
    slices = params.arch.layer_slices()
    for li in range(len(layers) - 1, -1, -1):
        w_sl, b_sl, _ = slices[li]
        h = acts[li]
        grads[:, w_sl] = (delta[:, :, None] * h[:, None, :]).reshape(n, -1)
        grads[:, b_sl] = delta
        if li > 0:
            delta = (delta @ layers[li][0]) * (1.0 - h * h)
    if not np.all(np.isfinite(grads)):
        bad = np.argwhere(~np.isfinite(grads))[0]
        raise FloatingPointError(f"non-finite log-policy gradient at sample {bad[0]}, parameter {bad[1]}")
    return grads


def grad_log_prob(params: PolicyParameters, state, action) -> np.ndarray:
    return grad_log_prob_batch(params, state, np.atleast_1d(action))[0]


def sample_batch(params: PolicyParameters, X, u) -> np.ndarray:
    """Draw actions by inverse CDF from uniforms ``u`` in [0, 1)."""
    X = _as_matrix(X)
    u = np.asarray(u, dtype=float)
    out = forward_batch(params, X)
    if params.mode == DISCRETE:
        cdf = np.cumsum(out.probs, axis=1)
        idx = (u[:, None] >= cdf[:, :2]).sum(axis=1)
        return DISCRETE_ACTIONS[idx]
    a = truncnorm_ppf(u, out.mean, out.std)
    return np.clip(a, -1 + BOUNDARY_EPS, 1 - BOUNDARY_EPS)


def sample(params: PolicyParameters, state, seed) -> float:
    u = np.random.default_rng(seed).random(1)
    return float(sample_batch(params, state, u)[0])


def greedy_batch(params: PolicyParameters, X) -> np.ndarray:
    """Most likely discrete allocation (ties prefer Flat, then Short) or the continuous mean head."""
    out = forward_batch(params, X)
    if params.mode == DISCRETE:
        order = np.array([1, 0, 2])
        return DISCRETE_ACTIONS[order[np.argmax(out.probs[:, order], axis=1)]]
    return np.asarray(out.mean)


def natural_update(params: PolicyParameters, w, alpha: float) -> PolicyParameters:
    w = np.asarray(getattr(w, "w", w), dtype=float)
    if w.shape != params.theta.shape:
        raise ValueError(f"update has dimension {w.size}, policy has {params.n_params}")
    return params.with_theta(params.theta + alpha * w)


@dataclass(frozen=True)
class ConstantPolicy:
    """Always targets the same allocation; used for baselines and fixtures."""

    value: float
    mode: str = CONTINUOUS

    def sample(self, X, u) -> np.ndarray:
        return np.full(len(np.atleast_2d(X)), float(self.value))

    def greedy(self, X) -> np.ndarray:
        return self.sample(X, None)
