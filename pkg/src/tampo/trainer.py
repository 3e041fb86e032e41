"""Two-loop training: GRPO inner updates with a temperature chosen per step by a
schedule (adaptive meta-policy, fixed, or linear), plus the optimal-temperature
vs. advantage-sign diagnostic.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .envs import GenerationCounter, RolloutGroup, TaskSpec, generate_group
from .grpo import GrpoConfig, NonFiniteError, fill_advantages, grpo_step, learning_rate_at
from .policy import PolicyParams
from .tempmeta import (
    MetaPolicyState,
    TampoConfig,
    TemperatureGrid,
    likelihood_optimal_temp,
    meta_update,
    sample_temperature,
)

# Stream-splitting scheme: every random stream is keyed by (seed, purpose, ...).
_PURPOSE = {"temperature": 1, "epoch": 2, "rollout": 3, "eval": 4}


def stream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, purpose, *keys)``."""
    return np.random.default_rng([seed, _PURPOSE[purpose], *keys])


@dataclass(frozen=True)
class Schedule:
    kind: str  # "tampo", "fixed" or "linear"
    t0: float = 1.0
    t1: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("tampo", "fixed", "linear"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind != "tampo" and not (self.t0 > 0 and self.t1 > 0):
            raise ValueError("schedule temperatures must be positive")

    @classmethod
    def tampo(cls) -> Schedule:
        return cls("tampo")

    @classmethod
    def fixed(cls, T: float) -> Schedule:
        return cls("fixed", T, T)

    @classmethod
    def linear(cls, t0: float, t1: float) -> Schedule:
        return cls("linear", t0, t1)

    @classmethod
    def parse(cls, text: str) -> Schedule:
        """``tampo``, ``fixed:T`` or ``linear:T0:T1``."""
        parts = text.strip().split(":")
        try:
            if parts[0] == "tampo" and len(parts) == 1:
                return cls.tampo()
            if parts[0] == "fixed" and len(parts) == 2:
                return cls.fixed(float(parts[1]))
            if parts[0] == "linear" and len(parts) == 3:
                return cls.linear(float(parts[1]), float(parts[2]))
        except ValueError as exc:
            raise ValueError(f"bad schedule {text!r}: {exc}") from None
        raise ValueError(f"bad schedule {text!r}; expected tampo, fixed:T or linear:T0:T1")

    def __str__(self) -> str:
        if self.kind == "tampo":
            return "tampo"
        if self.kind == "fixed":
            return f"fixed:{self.t0!r}"
        return f"linear:{self.t0!r}:{self.t1!r}"

    def baseline_temperature(self, step: int, total_steps: int) -> float:
        if self.kind == "fixed":
            return self.t0
        if self.kind == "linear":
            if total_steps == 1:
                return self.t0
            return self.t0 + (self.t1 - self.t0) * (step - 1) / (total_steps - 1)
        raise ValueError("the tampo schedule has no fixed temperature")


@dataclass
class MetricsRecord:
    step: int
    sampled_T: float
    meta_dist: list[float]
    ema_adv: list[float]
    mean_reward: float
    advantage_mean: float
    advantage_std: float
    fraction_zero_variance_groups: float
    generation_counter: int
    objective: float
    wall_ms: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingAborted(RuntimeError):
    """Numeric failure mid-run; carries the step and the records so far."""

    def __init__(self, step: int, message: str, records: list[MetricsRecord], dump: dict):
        super().__init__(f"training aborted at step {step}: {message}")
        self.step = step
        self.records = records
        self.dump = dump


@dataclass
class TrainRun:
    config: dict
    records: list[MetricsRecord]
    params: PolicyParams
    meta_state: MetaPolicyState
    seed: int
    archive: list[tuple[int, list[RolloutGroup]]] | None = None

    @property
    def generation_counter(self) -> int:
        return self.records[-1].generation_counter if self.records else 0


def warmup_steps(warmup_fraction: float, total_steps: int) -> int:
    # round first so 0.1 * 300 does not ceil to 31
    return math.ceil(round(warmup_fraction * total_steps, 9))


def _task_batches(tasks: Sequence[TaskSpec], batch_size: int, seed: int):
    """Yield batches walking the suite in a fresh seeded permutation each epoch."""
    epoch = 0
    order: list[int] = []
    while True:
        batch = []
        while len(batch) < batch_size:
            if not order:
                order = list(stream(seed, "epoch", epoch).permutation(len(tasks)))
                epoch += 1
            batch.append(tasks[order.pop(0)])
        yield batch


def train(
    policy_init: PolicyParams,
    tasks: Sequence[TaskSpec],
    schedule: Schedule,
    grpo_cfg: GrpoConfig,
    tampo_cfg: TampoConfig,
    steps: int,
    batch_size: int,
    G: int,
    seed: int,
    archive: bool = False,
    on_record: Callable[[MetricsRecord], None] | None = None,
) -> TrainRun:
    """Run ``steps`` training steps and return the full run.

    The reference policy is ``policy_init``, frozen.  Meta-policy updates run
    only for the tampo schedule, including during its warmup.
    """
    if steps < 1 or batch_size < 1 or G < 2:
        raise ValueError("need steps >= 1, batch_size >= 1, G >= 2")
    if not tasks:
        raise ValueError("empty task suite")
    grid: TemperatureGrid = tampo_cfg.grid
    ref = policy_init.copy()
    params = policy_init.copy()
    state = MetaPolicyState.initial(len(grid))
    counter = GenerationCounter()
    adaptive = schedule.kind == "tampo"
    n_warm = warmup_steps(tampo_cfg.warmup_fraction, steps) if adaptive else 0
    batches = _task_batches(tasks, batch_size, seed)
    records: list[MetricsRecord] = []
    kept: list[tuple[int, list[RolloutGroup]]] | None = [] if archive else None

    for s in range(1, steps + 1):
        t_start = time.perf_counter()
        if not adaptive:
            T = schedule.baseline_temperature(s, steps)
        elif s <= n_warm:
            T = tampo_cfg.warmup_temperature
        else:
            T, _ = sample_temperature(state.dist, grid, tampo_cfg.top_p, stream(seed, "temperature", s))

        batch = next(batches)
        groups = [
            generate_group(params, task, G, T, stream(seed, "rollout", s, j), counter)
            for j, task in enumerate(batch)
        ]
        advantages = np.concatenate([fill_advantages(g, grpo_cfg.std_floor) for g in groups])
        flat = [g.rewards.std() < grpo_cfg.std_floor for g in groups]

        lr = learning_rate_at(grpo_cfg, s, steps)
        try:
            params, objective = grpo_step(params, ref, groups, T, grpo_cfg, lr)
        except NonFiniteError as exc:
            dump = {"sampled_T": T, "learning_rate": lr, "rewards": [g.rewards.tolist() for g in groups]}
            raise TrainingAborted(s, str(exc), records, dump) from exc

        if adaptive:
            state, _ = meta_update(state, groups, tampo_cfg)

        rewards = np.concatenate([g.rewards for g in groups])
        rec = MetricsRecord(
            step=s,
            sampled_T=float(T),
            meta_dist=state.dist.tolist(),
            ema_adv=state.ema_adv.tolist(),
            mean_reward=float(rewards.mean()),
            advantage_mean=float(advantages.mean()),
            advantage_std=float(advantages.std()),
            fraction_zero_variance_groups=float(np.mean(flat)),
            generation_counter=counter.count,
            objective=float(objective),
            wall_ms=(time.perf_counter() - t_start) * 1e3,
        )
        records.append(rec)
        if kept is not None:
            kept.append((s, groups))
        if on_record is not None:
            on_record(rec)

    config = {
        "schedule": str(schedule),
        "grpo": asdict(grpo_cfg),
        "tampo": {**asdict(tampo_cfg), "grid": list(grid.values)},
        "steps": steps,
        "batch_size": batch_size,
        "group_size": G,
        "seed": seed,
    }
    return TrainRun(config, records, params, state, seed, kept)


@dataclass
class WindowStats:
    window: int
    first_step: int
    last_step: int
    positive: list[float] = field(default_factory=list)
    negative: list[float] = field(default_factory=list)

    @staticmethod
    def _summary(xs: list[float]) -> dict:
        if not xs:
            return {"count": 0, "mean": None, "std": None, "median": None}
        a = np.asarray(xs)
        return {"count": len(xs), "mean": float(a.mean()), "std": float(a.std()), "median": float(np.median(a))}

    @property
    def positive_summary(self) -> dict:
        return self._summary(self.positive)

    @property
    def negative_summary(self) -> dict:
        return self._summary(self.negative)

    def histogram(self, grid: TemperatureGrid, sign: int) -> list[int]:
        xs = self.positive if sign > 0 else self.negative
        return [sum(1 for x in xs if x == T) for T in grid.values]

    def to_dict(self, grid: TemperatureGrid) -> dict:
        return {
            "window": self.window,
            "first_step": self.first_step,
            "last_step": self.last_step,
            "positive": {**self.positive_summary, "histogram": self.histogram(grid, 1)},
            "negative": {**self.negative_summary, "histogram": self.histogram(grid, -1)},
        }


@dataclass
class DiagnosticReport:
    available: bool
    windows: list[WindowStats]
    grid: TemperatureGrid | None = None
    reason: str = ""

    @property
    def empty(self) -> bool:
        return all(not w.positive and not w.negative for w in self.windows)


def optimal_temperature_diagnostic(
    archive: list[tuple[int, list[RolloutGroup]]] | None,
    grid: TemperatureGrid,
    window: int = 5,
) -> DiagnosticReport:
    """Likelihood-optimal temperatures of archived rollouts, split by advantage sign,
    per ``window``-step block.  Zero-advantage trajectories are skipped.
    """
    if archive is None:
        return DiagnosticReport(False, [], grid, reason="diagnostic unavailable: rollout archive disabled")
    windows: dict[int, WindowStats] = {}
    for step, groups in archive:
        w = (step - 1) // window
        stats = windows.setdefault(w, WindowStats(w, w * window + 1, (w + 1) * window))
        for group in groups:
            for traj in group.trajectories:
                if not traj.advantage:
                    continue
                T_star, _ = likelihood_optimal_temp(traj, grid)
                (stats.positive if traj.advantage > 0 else stats.negative).append(T_star)
    return DiagnosticReport(True, [windows[w] for w in sorted(windows)], grid)
