"""Critic-free inner loop: group advantages, clipped surrogate with KL, update."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .envs import RolloutGroup
from .policy import PolicyParams, current_logits, scatter_rows, temp_log_softmax


class NonFiniteError(FloatingPointError):
    """Raised when an update would write NaN/inf into the policy."""


@dataclass(frozen=True)
class GrpoConfig:
    clip_eps: float = 0.2
    kl_beta: float = 0.01
    learning_rate: float = 1e-2
    inner_epochs: int = 1
    std_floor: float = 1e-8
    lr_schedule: str = "constant"  # or "cosine"
    lr_warmup_fraction: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.inner_epochs < 1:
            raise ValueError("inner_epochs must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0 <= self.lr_warmup_fraction < 1:
            raise ValueError("lr_warmup_fraction must lie in [0, 1)")


def learning_rate_at(cfg: GrpoConfig, step: int, total_steps: int) -> float:
    """Learning rate for 1-based ``step``; cosine decays to 0 after a linear warmup."""
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    warm = math.ceil(cfg.lr_warmup_fraction * total_steps)
    if step <= warm:
        return cfg.learning_rate * step / warm
    progress = (step - warm - 1) / max(total_steps - warm, 1)
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * progress))


def group_advantages(rewards: Sequence[float], std_floor: float = 1e-8) -> np.ndarray:
    """Standardize rewards within a group (population std); flat groups give zeros."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError("a group needs at least 2 rewards")
    std = r.std()
    if std < std_floor:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def fill_advantages(group: RolloutGroup, std_floor: float = 1e-8) -> np.ndarray:
    adv = group_advantages(group.rewards, std_floor)
    for traj, a in zip(group.trajectories, adv):
        traj.advantage = float(a)
    return adv


def grpo_objective_grad(
    params: PolicyParams,
    old_params: PolicyParams,
    ref_params: PolicyParams,
    group: RolloutGroup,
    T: float,
    cfg: GrpoConfig,
) -> tuple[float, np.ndarray]:
    """Clipped surrogate minus per-token KL penalty, and its gradient w.r.t. ``params``.

    The KL estimate at a sampled token is ``r - log r - 1`` with
    ``r = pi_ref / pi_theta``.  ``old_params`` and ``ref_params`` are constants.
    """
    G = len(group)
    objective = 0.0
    grad = np.zeros_like(params.table)
    lo, hi = 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps
    for traj in group.trajectories:
        if traj.advantage is None:
            raise ValueError("advantages must be filled before the GRPO objective")
        A = traj.advantage
        n = len(traj)
        steps = np.arange(n)
        logp_all = temp_log_softmax(current_logits(params, traj), T)
        logp = logp_all[steps, traj.tokens]
        logp_old = temp_log_softmax(current_logits(old_params, traj), T)[steps, traj.tokens]
        logp_ref = temp_log_softmax(current_logits(ref_params, traj), T)[steps, traj.tokens]
        if not np.all(np.isfinite(logp_old)):
            raise ValueError("old policy assigns zero probability to a sampled token")

        ratio = np.exp(logp - logp_old)
        unclipped = ratio * A
        clipped = np.clip(ratio, lo, hi) * A
        surrogate = np.minimum(unclipped, clipped)
        log_r = logp_ref - logp
        r = np.exp(log_r)
        kl = r - log_r - 1.0
        objective += float(np.sum(surrogate - cfg.kl_beta * kl)) / (G * n)

        # d/dlogp of each per-token term; the clipped branch is flat
        coef = np.where(unclipped <= clipped, unclipped, 0.0) + cfg.kl_beta * (r - 1.0)
        rows = -np.exp(logp_all)
        rows[steps, traj.tokens] += 1.0
        rows *= (coef / (T * G * n))[:, None]
        grad += scatter_rows(params, traj, rows)
    return objective, grad


def batch_objective_grad(
    params: PolicyParams,
    old_params: PolicyParams,
    ref_params: PolicyParams,
    groups: Sequence[RolloutGroup],
    T: float,
    cfg: GrpoConfig,
) -> tuple[float, np.ndarray]:
    """Mean of the per-group objectives, reduced in group order."""
    if not groups:
        raise ValueError("empty batch")
    total = 0.0
    grad = np.zeros_like(params.table)
    for group in groups:
        obj, g = grpo_objective_grad(params, old_params, ref_params, group, T, cfg)
        total += obj
        grad += g
    return total / len(groups), grad / len(groups)


def policy_update(
    params: PolicyParams, gradient: np.ndarray, cfg: GrpoConfig, learning_rate: float | None = None
) -> PolicyParams:
    """Gradient ascent step; returns new params."""
    if gradient.shape != params.table.shape:
        raise ValueError(f"gradient shape {gradient.shape} != params {params.table.shape}")
    if not np.all(np.isfinite(gradient)):
        bad = np.argwhere(~np.isfinite(gradient))
        raise NonFiniteError(f"non-finite gradient at {len(bad)} entries, first {tuple(bad[0])}")
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    return PolicyParams(params.table + lr * gradient, per_prompt=params.per_prompt)


def grpo_step(
    params: PolicyParams,
    ref_params: PolicyParams,
    groups: Sequence[RolloutGroup],
    T: float,
    cfg: GrpoConfig,
    learning_rate: float | None = None,
) -> tuple[PolicyParams, float]:
    """Run ``inner_epochs`` ascent steps against a snapshot of the starting params.

    Returns the updated params and the objective at the first epoch.
    """
    old = params.copy()
    first_objective = None
    for _ in range(cfg.inner_epochs):
        obj, grad = batch_objective_grad(params, old, ref_params, groups, T, cfg)
        if not math.isfinite(obj):
            raise NonFiniteError(f"non-finite GRPO objective {obj}")
        if first_objective is None:
            first_objective = obj
        params = policy_update(params, grad, cfg, learning_rate)
    return params, first_objective
