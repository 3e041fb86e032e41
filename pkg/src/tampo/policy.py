"""Toy autoregressive softmax policy with explicit temperature scaling.

The policy state is ``(position, previous token)``; the previous-token index
``V`` stands for "sequence start".  Logits are rows of a parameter table, so
every likelihood and gradient is exactly computable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PolicyParams:
    """Tabular logits of shape ``(max_len, V + 1, V)``.

    With ``per_prompt=True`` the table carries a leading prompt axis,
    ``(n_prompts, max_len, V + 1, V)``, and ``prompt_id`` selects the slice.
    """

    table: np.ndarray
    per_prompt: bool = False

    def __post_init__(self) -> None:
        self.table = np.asarray(self.table, dtype=np.float64)
        expected_ndim = 4 if self.per_prompt else 3
        if self.table.ndim != expected_ndim:
            raise ValueError(
                f"table must have {expected_ndim} dims, got shape {self.table.shape}"
            )
        if self.table.shape[-2] != self.table.shape[-1] + 1:
            raise ValueError(
                f"table must be (..., max_len, V+1, V), got shape {self.table.shape}"
            )

    @classmethod
    def zeros(cls, vocab_size: int, max_len: int, n_prompts: int | None = None) -> PolicyParams:
        if vocab_size < 1 or max_len < 1:
            raise ValueError("vocab_size and max_len must be positive")
        if n_prompts is None:
            return cls(np.zeros((max_len, vocab_size + 1, vocab_size)))
        return cls(np.zeros((n_prompts, max_len, vocab_size + 1, vocab_size)), per_prompt=True)

    @property
    def vocab_size(self) -> int:
        return self.table.shape[-1]

    @property
    def max_len(self) -> int:
        return self.table.shape[-3]

    @property
    def start_token(self) -> int:
        return self.vocab_size

    def copy(self) -> PolicyParams:
        return PolicyParams(self.table.copy(), per_prompt=self.per_prompt)

    def prompt_table(self, prompt_id: int) -> np.ndarray:
        """The ``(max_len, V + 1, V)`` view used for ``prompt_id``."""
        if not self.per_prompt:
            return self.table
        if not 0 <= prompt_id < self.table.shape[0]:
            raise ValueError(f"prompt_id {prompt_id} outside per-prompt table")
        return self.table[prompt_id]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.table)))


@dataclass
class Trajectory:
    """A sampled token sequence with the logits seen at generation time.

    ``step_logits`` are the raw (un-tempered) rows, one per token.
    ``advantage`` stays ``None`` until group advantages are computed.
    """

    prompt_id: int
    tokens: np.ndarray
    step_logits: np.ndarray
    reward: float = 0.0
    advantage: float | None = None
    sampled_temperature: float = 1.0
    _prev: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.step_logits = np.asarray(self.step_logits, dtype=np.float64)
        if self.tokens.ndim != 1 or len(self.tokens) == 0:
            raise ValueError("trajectory needs at least one token")
        if self.step_logits.shape[0] != len(self.tokens) or self.step_logits.ndim != 2:
            raise ValueError("step_logits must be (n, V) with n == len(tokens)")
        if np.any(self.tokens < 0) or np.any(self.tokens >= self.step_logits.shape[1]):
            raise ValueError("token index out of vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def prev_tokens(self) -> np.ndarray:
        """Previous-token index per step; the first step sees the start index V."""
        if self._prev is None:
            start = self.step_logits.shape[1]
            self._prev = np.concatenate(([start], self.tokens[:-1]))
        return self._prev


def logits(params: PolicyParams, prompt_id: int, position: int, prev_token: int) -> np.ndarray:
    if not 0 <= position < params.max_len:
        raise ValueError(f"position {position} outside [0, {params.max_len})")
    if not 0 <= prev_token <= params.vocab_size:
        raise ValueError(f"prev_token {prev_token} outside [0, {params.vocab_size}]")
    return params.prompt_table(prompt_id)[position, prev_token].copy()


def _check_temperature(T: float) -> None:
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")


def temp_softmax(z: np.ndarray, T: float) -> np.ndarray:
    """Softmax of ``z / T`` along the last axis (max-subtracted)."""
    _check_temperature(T)
    z = np.asarray(z, dtype=np.float64)
    if np.any(np.isnan(z)):
        raise ValueError("NaN logit")
    scaled = z / T
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(scaled)
    return e / e.sum(axis=-1, keepdims=True)


def temp_log_softmax(z: np.ndarray, T: float) -> np.ndarray:
    _check_temperature(T)
    scaled = np.asarray(z, dtype=np.float64) / T
    m = scaled.max(axis=-1, keepdims=True)
    return scaled - m - np.log(np.exp(scaled - m).sum(axis=-1, keepdims=True))


def sample_token(dist: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from a single distribution."""
    return int(sample_tokens(np.asarray(dist)[None, :], rng)[0])


def sample_tokens(dists: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw from each row of ``dists`` using one uniform per row."""
    cdf = np.cumsum(dists, axis=-1)
    u = rng.random(dists.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=-1)
    return np.minimum(idx, dists.shape[-1] - 1)


def _check_traj(params: PolicyParams, traj: Trajectory) -> None:
    if traj.step_logits.shape[1] != params.vocab_size:
        raise ValueError("trajectory vocabulary does not match params")
    if len(traj) > params.max_len:
        raise ValueError("trajectory longer than max_len")


def current_logits(params: PolicyParams, traj: Trajectory) -> np.ndarray:
    """Logit rows for the trajectory's states under ``params`` (not the stored ones)."""
    _check_traj(params, traj)
    table = params.prompt_table(traj.prompt_id)
    return table[np.arange(len(traj)), traj.prev_tokens]


def scatter_rows(params: PolicyParams, traj: Trajectory, row_grads: np.ndarray) -> np.ndarray:
    """Accumulate per-step row gradients ``(n, V)`` into a full-table gradient."""
    grad = np.zeros_like(params.table)
    target = grad[traj.prompt_id] if params.per_prompt else grad
    # positions are distinct, so each (t, prev_t) row is hit at most once
    target[np.arange(len(traj)), traj.prev_tokens] += row_grads
    return grad


def logprob_and_grad(params: PolicyParams, traj: Trajectory, T: float) -> tuple[float, np.ndarray]:
    """Log-probability of ``traj`` at temperature ``T`` and its gradient w.r.t. the table."""
    _check_temperature(T)
    z = current_logits(params, traj)
    n = len(traj)
    logp = temp_log_softmax(z, T)
    value = float(logp[np.arange(n), traj.tokens].sum())
    rows = -np.exp(logp)
    rows[np.arange(n), traj.tokens] += 1.0
    return value, scatter_rows(params, traj, rows / T)
