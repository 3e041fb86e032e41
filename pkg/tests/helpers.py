import numpy as np

from tampo.envs import RolloutGroup
from tampo.policy import PolicyParams, Trajectory


def make_traj(step_logits, tokens, advantage=None, prompt_id=0, reward=0.0):
    return Trajectory(
        prompt_id, np.asarray(tokens), np.asarray(step_logits, dtype=float), reward=reward, advantage=advantage
    )


def random_params(rng, V, max_len, scale=1.0):
    return PolicyParams(rng.normal(scale=scale, size=(max_len, V + 1, V)))


def random_traj(rng, params, n, prompt_id=0):
    """Random tokens with step_logits read from ``params`` along the path."""
    V = params.vocab_size
    tokens = rng.integers(0, V, n)
    prev = np.concatenate(([V], tokens[:-1]))
    table = params.prompt_table(prompt_id)
    return Trajectory(prompt_id, tokens, table[np.arange(n), prev])


def random_group(rng, params, G, max_n, T=1.0):
    trajs = [random_traj(rng, params, int(rng.integers(1, max_n + 1))) for _ in range(G)]
    for tr in trajs:
        tr.reward = float(rng.random())
        tr.sampled_temperature = T
    r = np.array([tr.reward for tr in trajs])
    for tr, a in zip(trajs, (r - r.mean()) / r.std()):
        tr.advantage = float(a)
    return RolloutGroup(0, trajs, T)
