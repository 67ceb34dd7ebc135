"""Discrete Ornstein-Uhlenbeck predictor.

    p[t+1] = p[t] - epsilon * p[t] + beta * xi[t],   xi ~ N(0, 1) iid

Noise for step k is drawn from a stream keyed by (seed, k // CHUNK), so any
slice of a path can be regenerated without producing the steps before it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter
from scipy.special import ndtr

from .errors import DomainError, EmptyPathError

CHUNK = 1 << 16
_START_KEY = 0xFFFFFFFF


@dataclass(frozen=True)
class OuParams:
    epsilon: float
    beta: float

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise DomainError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise DomainError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class PathSample:
    values: np.ndarray = field(repr=False)
    seed: int
    params: OuParams

    def __len__(self):
        return len(self.values)


def step(p: float, xi: float, params: OuParams) -> float:
    return p - params.epsilon * p + params.beta * xi


def stationary_std(params: OuParams) -> float:
    """Exact stationary deviation of the discrete chain, beta / sqrt(2e - e^2)."""
    e = params.epsilon
    return params.beta / math.sqrt(2.0 * e - e * e)


def integrated_predictability(p, params: OuParams):
    """p_inf(p) = sum_n E[p_{t+n} | p_t = p] = p / epsilon."""
    return p / params.epsilon


def transition(p, params: OuParams):
    """Mean and std of the Gaussian one-step kernel P(p' | p)."""
    return (1.0 - params.epsilon) * p, params.beta


def prob_above(q, p, params: OuParams):
    """P(p_{t+1} > q | p_t = p)."""
    mean, std = transition(p, params)
    return ndtr((mean - q) / std)


def prob_below(q, p, params: OuParams):
    """P(p_{t+1} < q | p_t = p)."""
    mean, std = transition(p, params)
    return ndtr((q - mean) / std)


def derive_seed(master: int, index: int) -> int:
    """Per-path seed from (master seed, path index)."""
    ss = np.random.SeedSequence([int(master), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def noise(seed: int, start: int, count: int) -> np.ndarray:
    """Standard normals xi_k for k in [start, start + count)."""
    out = np.empty(count)
    k = start
    pos = 0
    while pos < count:
        chunk, offset = divmod(k, CHUNK)
        take = min(CHUNK - offset, count - pos)
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(chunk,)))
        )
        block = rng.standard_normal(offset + take)
        out[pos:pos + take] = block[offset:]
        pos += take
        k += take
    return out


def _start_draw(seed: int) -> float:
    ss = np.random.SeedSequence(int(seed), spawn_key=(_START_KEY,))
    return float(np.random.Generator(np.random.PCG64(ss)).standard_normal())


def propagate(p0: float, xi: np.ndarray, params: OuParams) -> np.ndarray:
    """Apply ``step`` along a noise sequence; returns [p0, p1, ..., p_len(xi)]."""
    out = np.empty(len(xi) + 1)
    out[0] = p0
    if len(xi):
        a = 1.0 - params.epsilon
        out[1:] = lfilter([1.0], [1.0, -a], params.beta * xi, zi=[a * p0])[0]
    return out


def simulate_path(
    params: OuParams,
    n: int,
    seed: int,
    start: float | str = "stationary",
    burn_in: int = 0,
) -> PathSample:
    """Simulate n values of the predictor.

    ``start`` is either a number or ``"stationary"`` (draw p0 from the
    stationary law). With ``burn_in > 0`` the chain is started at ``start``,
    run for ``burn_in`` steps and only the following n values are kept.
    """
    if n < 1:
        raise EmptyPathError("a path needs at least one value")
    if isinstance(start, str):
        if start != "stationary":
            raise DomainError(f"unknown start mode {start!r}")
        p0 = stationary_std(params) * _start_draw(seed)
    else:
        p0 = float(start)
    xi = noise(seed, 0, burn_in + n - 1)
    values = propagate(p0, xi, params)[burn_in:]
    return PathSample(values=values, seed=int(seed), params=params)


def burn_in_steps(params: OuParams) -> int:
    return math.ceil(10.0 / params.epsilon)
