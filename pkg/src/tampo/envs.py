"""Synthetic sequence-reward tasks, group rollouts and Pass@k evaluation."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .policy import PolicyParams, Trajectory, sample_tokens, temp_softmax

TASK_KINDS = ("target_exact", "target_dense", "rare_needle")

# Pass@k success threshold; binary rewards are exactly 0 or 1.
SUCCESS_THRESHOLD = 0.999

# Initial logit of the needle token relative to the others.
NEEDLE_LOGIT_OFFSET = -2.0


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    prompt_id: int
    episode_len: int
    target: tuple[int, ...] = ()
    needle_token: int = -1

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.episode_len < 1:
            raise ValueError("episode_len must be positive")
        if self.kind == "rare_needle":
            if self.needle_token < 0:
                raise ValueError("rare_needle needs a needle_token")
        elif len(self.target) != self.episode_len:
            raise ValueError("target length must equal episode_len")


class GenerationCounter:
    """Thread-safe count of sampled trajectories."""

    def __init__(self) -> None:
        self._count = 0
        self._lock = threading.Lock()

    def add(self, n: int) -> None:
        with self._lock:
            self._count += n

    @property
    def count(self) -> int:
        return self._count


@dataclass
class RolloutGroup:
    prompt_id: int
    trajectories: list[Trajectory]
    sampled_temperature: float

    @property
    def rewards(self) -> np.ndarray:
        return np.array([tr.reward for tr in self.trajectories])

    def __len__(self) -> int:
        return len(self.trajectories)


@dataclass
class EvalReport:
    k: int
    pass_at_1: float
    pass_at_k: float
    mean_reward: float
    per_prompt: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def pass_at_8(self) -> float:
        if self.k != 8:
            raise AttributeError(f"report was computed with k={self.k}")
        return self.pass_at_k

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "pass_at_1": self.pass_at_1,
            f"pass_at_{self.k}": self.pass_at_k,
            "mean_reward": self.mean_reward,
            "per_prompt": [
                {"prompt_id": p, "successes": s, "attempts": a} for p, s, a in self.per_prompt
            ],
        }


def reward(task: TaskSpec, tokens: Sequence[int]) -> float:
    tokens = np.asarray(tokens)
    if len(tokens) != task.episode_len:
        raise ValueError(f"expected {task.episode_len} tokens, got {len(tokens)}")
    if task.kind == "target_exact":
        return float(np.array_equal(tokens, task.target))
    if task.kind == "target_dense":
        return float(np.mean(tokens == np.asarray(task.target)))
    return float(np.any(tokens == task.needle_token))


def _sample_sequences(
    params: PolicyParams, task: TaskSpec, n: int, T: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    if task.episode_len > params.max_len:
        raise ValueError("episode_len exceeds policy max_len")
    table = params.prompt_table(task.prompt_id)
    V = params.vocab_size
    L = task.episode_len
    tokens = np.empty((n, L), dtype=np.int64)
    step_logits = np.empty((n, L, V))
    prev = np.full(n, V)
    for t in range(L):
        z = table[t, prev]
        tok = sample_tokens(temp_softmax(z, T), rng)
        tokens[:, t] = tok
        step_logits[:, t] = z
        prev = tok
    return tokens, step_logits


def generate_group(
    params: PolicyParams,
    task: TaskSpec,
    G: int,
    T: float,
    rng: np.random.Generator,
    counter: GenerationCounter | None = None,
) -> RolloutGroup:
    """Sample ``G`` trajectories for ``task`` at temperature ``T``."""
    if G < 2:
        raise ValueError(f"group size must be >= 2, got {G}")
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    tokens, step_logits = _sample_sequences(params, task, G, T, rng)
    trajectories = [
        Trajectory(
            prompt_id=task.prompt_id,
            tokens=tokens[i],
            step_logits=step_logits[i],
            reward=reward(task, tokens[i]),
            sampled_temperature=T,
        )
        for i in range(G)
    ]
    if counter is not None:
        counter.add(G)
    return RolloutGroup(task.prompt_id, trajectories, T)


def pass_at_k(
    params: PolicyParams,
    tasks: Sequence[TaskSpec],
    k: int,
    T_eval: float = 1.0,
    rng: np.random.Generator | None = None,
    success_threshold: float = SUCCESS_THRESHOLD,
    counter: GenerationCounter | None = None,
) -> EvalReport:
    """Pass@1 and Pass@k over ``tasks``; Pass@1 looks at the first attempt only."""
    if not tasks:
        raise ValueError("empty task list")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    first_ok = 0
    any_ok = 0
    total_reward = 0.0
    per_prompt = []
    for task in tasks:
        tokens, _ = _sample_sequences(params, task, k, T_eval, rng)
        rewards = np.array([reward(task, row) for row in tokens])
        ok = rewards >= success_threshold
        first_ok += bool(ok[0])
        any_ok += bool(ok.any())
        total_reward += rewards.sum()
        per_prompt.append((task.prompt_id, int(ok.sum()), k))
        if counter is not None:
            counter.add(k)
    n = len(tasks)
    return EvalReport(k, first_ok / n, any_ok / n, total_reward / (n * k), per_prompt)


def make_suite(
    kind: str,
    n_prompts: int,
    vocab_size: int,
    episode_len: int,
    seed: int = 0,
    needle_token: int | None = None,
) -> list[TaskSpec]:
    """Build a task suite; targets are drawn from ``seed``.

    rare_needle suites share one needle token (default ``V - 1``) so a shared
    policy table can learn it.
    """
    if n_prompts < 1:
        raise ValueError("n_prompts must be positive")
    if kind == "rare_needle":
        needle = vocab_size - 1 if needle_token is None else needle_token
        if not 0 <= needle < vocab_size:
            raise ValueError("needle_token outside vocabulary")
        return [
            TaskSpec("rare_needle", p, episode_len, needle_token=needle) for p in range(n_prompts)
        ]
    rng = np.random.default_rng(seed)
    return [
        TaskSpec(kind, p, episode_len, target=tuple(int(x) for x in rng.integers(0, vocab_size, episode_len)))
        for p in range(n_prompts)
    ]


def init_params(
    tasks: Sequence[TaskSpec], vocab_size: int, max_len: int, per_prompt: bool = False
) -> PolicyParams:
    """Zero table, with each rare_needle task's needle logit lowered by 2."""
    params = PolicyParams.zeros(vocab_size, max_len, len(tasks) if per_prompt else None)
    for task in tasks:
        if task.kind != "rare_needle":
            continue
        if per_prompt:
            params.table[task.prompt_id, ..., task.needle_token] = NEEDLE_LOGIT_OFFSET
        else:
            params.table[..., task.needle_token] = NEEDLE_LOGIT_OFFSET
    return params
