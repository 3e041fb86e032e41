"""Temperature meta-policy: virtual-temperature likelihoods, sparsemax credit,
EMA state and nucleus sampling over a temperature grid.

Everything here works on stored rollout logits only; nothing generates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .envs import RolloutGroup
from .policy import Trajectory


@dataclass(frozen=True)
class TemperatureGrid:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("temperature grid needs at least 2 values")
        if np.any(v <= 0) or np.any(np.diff(v) <= 0):
            raise ValueError("temperatures must be positive and strictly increasing")
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @classmethod
    def from_range(cls, t_min: float, t_max: float, interval: float) -> TemperatureGrid:
        """Inclusive arithmetic grid, e.g. ``(0.6, 1.5, 0.1)`` -> 0.6, 0.7, ..., 1.5."""
        if interval <= 0:
            raise ValueError("interval must be positive")
        k = int(round((t_max - t_min) / interval)) + 1
        return cls(tuple(round(t_min + i * interval, 10) for i in range(k)))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values)

    def __len__(self) -> int:
        return len(self.values)


DEFAULT_GRID = TemperatureGrid.from_range(0.6, 1.5, 0.1)


@dataclass
class MetaPolicyState:
    ema_adv: np.ndarray
    dist: np.ndarray
    step: int = 0

    @classmethod
    def initial(cls, K: int) -> MetaPolicyState:
        return cls(np.zeros(K), np.full(K, 1.0 / K), 0)


@dataclass(frozen=True)
class TampoConfig:
    grid: TemperatureGrid = field(default_factory=lambda: DEFAULT_GRID)
    alpha: float = 0.05
    top_p: float = 0.7
    warmup_fraction: float = 0.10
    warmup_temperature: float = 1.0
    prob_floor: float = 0.0  # extension: mix this much uniform mass into the meta-policy

    def __post_init__(self) -> None:
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if not 0 <= self.top_p <= 1:
            raise ValueError("top_p must lie in [0, 1]")
        if not 0 <= self.warmup_fraction <= 1:
            raise ValueError("warmup_fraction must lie in [0, 1]")
        if not self.warmup_temperature > 0:
            raise ValueError("warmup_temperature must be positive")
        if not 0 <= self.prob_floor < 1:
            raise ValueError("prob_floor must lie in [0, 1)")


def avg_loglik_curve(traj: Trajectory, temps: Sequence[float] | np.ndarray) -> np.ndarray:
    """Length-normalized log-likelihood of ``traj`` at each temperature in ``temps``.

    Uses the stored rollout-time logits.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    temps = np.asarray(temps, dtype=np.float64)
    if np.any(temps <= 0):
        raise ValueError("temperatures must be positive")
    z = traj.step_logits  # (n, V)
    chosen = z[np.arange(len(traj)), traj.tokens]  # (n,)
    scaled = z[None, :, :] / temps[:, None, None]  # (K, n, V)
    m = scaled.max(axis=-1)
    lse = m + np.log(np.exp(scaled - m[..., None]).sum(axis=-1))
    return (chosen[None, :] / temps[:, None] - lse).mean(axis=-1)


def avg_loglik_at_temp(traj: Trajectory, T: float) -> float:
    return float(avg_loglik_curve(traj, [T])[0])


def likelihood_optimal_temp(traj: Trajectory, grid: TemperatureGrid) -> tuple[float, int]:
    """Grid temperature maximizing the average log-likelihood; ties go to the lower one."""
    curve = avg_loglik_curve(traj, grid.array)
    k = int(np.argmax(curve))  # first maximum == lowest temperature
    return grid.values[k], k


def sparsemax(v: Sequence[float] | np.ndarray) -> np.ndarray:
    """Euclidean projection of ``v`` onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("sparsemax input must be finite")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, v.size + 1)
    support = ks[1 + ks * u > css]
    k = support[-1]
    tau = (css[k - 1] - 1.0) / k
    return np.maximum(v - tau, 0.0)


def temp_specific_advantages(traj: Trajectory, grid: TemperatureGrid) -> np.ndarray:
    """Advantage spread over the grid by the sparsemax of the likelihood curve."""
    if traj.advantage is None:
        raise ValueError("trajectory advantage not set")
    if traj.advantage == 0.0:
        return np.zeros(len(grid))
    return sparsemax(avg_loglik_curve(traj, grid.array)) * traj.advantage


def batch_aggregate(groups: Sequence[RolloutGroup], grid: TemperatureGrid) -> np.ndarray:
    """Mean temperature-specific advantage over every trajectory in the batch."""
    total = np.zeros(len(grid))
    n = 0
    for group in groups:
        for traj in group.trajectories:
            total += temp_specific_advantages(traj, grid)
            n += 1
    if n == 0:
        raise ValueError("empty batch")
    return total / n


def ema_update(state: MetaPolicyState, batch_adv: np.ndarray, alpha: float) -> MetaPolicyState:
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    ema = (1.0 - alpha) * state.ema_adv + alpha * np.asarray(batch_adv, dtype=np.float64)
    return replace(state, ema_adv=ema, step=state.step + 1)


def meta_distribution(ema_adv: Sequence[float] | np.ndarray, prob_floor: float = 0.0) -> np.ndarray:
    """Min-max normalize ``ema_adv`` into a distribution; a flat input gives uniform.

    ``prob_floor`` (off by default) mixes in that much uniform mass so the
    arg-min temperature is not permanently excluded.
    """
    a = np.asarray(ema_adv, dtype=np.float64)
    K = a.size
    lo, hi = a.min(), a.max()
    if hi - lo < 1e-12:
        dist = np.full(K, 1.0 / K)
    else:
        tilde = (a - lo) / (hi - lo)
        dist = tilde / tilde.sum()
    if prob_floor > 0:
        dist = (1.0 - prob_floor) * dist + prob_floor / K
    return dist


def nucleus(dist: Sequence[float] | np.ndarray, top_p: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the top-p nucleus (descending probability) and renormalized mass."""
    dist = np.asarray(dist, dtype=np.float64)
    if not 0 <= top_p <= 1:
        raise ValueError("top_p must lie in [0, 1]")
    order = np.argsort(-dist, kind="stable")  # ties keep the lower index first
    csum = np.cumsum(dist[order])
    reached = np.nonzero(csum >= top_p - 1e-12)[0]
    m = reached[0] + 1 if reached.size else dist.size
    keep = order[:m]
    probs = dist[keep]
    return keep, probs / probs.sum()


def sample_temperature(
    dist: Sequence[float] | np.ndarray,
    grid: TemperatureGrid,
    top_p: float,
    rng: np.random.Generator,
) -> tuple[float, int]:
    keep, probs = nucleus(dist, top_p)
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    j = min(int(np.searchsorted(cdf, u, side="right")), len(keep) - 1)
    k = int(keep[j])
    return grid.values[k], k


def meta_update(
    state: MetaPolicyState, groups: Sequence[RolloutGroup], cfg: TampoConfig
) -> tuple[MetaPolicyState, np.ndarray]:
    """One outer-loop update from the step's rollouts; returns the state and batch target."""
    batch_adv = batch_aggregate(groups, cfg.grid)
    state = ema_update(state, batch_adv, cfg.alpha)
    state.dist = meta_distribution(state.ema_adv, cfg.prob_floor)
    return state, batch_adv
