import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import make_traj, random_params, random_traj
from oracles import central_diff, rel_err
from tampo.envs import TaskSpec, generate_group
from tampo.policy import (
    PolicyParams,
    logits,
    logprob_and_grad,
    sample_token,
    temp_softmax,
)


class TestLogits:
    def test_zero_params(self):
        p = PolicyParams.zeros(4, 3)
        np.testing.assert_array_equal(logits(p, 0, 1, 2), np.zeros(4))

    def test_single_entry(self):
        p = PolicyParams.zeros(4, 3)
        p.table[0, 4, 2] = 1.5
        np.testing.assert_array_equal(logits(p, 0, 0, p.start_token), [0, 0, 1.5, 0])

    def test_deterministic(self, rng):
        p = random_params(rng, 5, 4)
        a = logits(p, 0, 2, 3)
        b = logits(p, 0, 2, 3)
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("pos,prev", [(3, 0), (-1, 0), (0, 5), (0, -1)])
    def test_out_of_range(self, pos, prev):
        with pytest.raises(ValueError):
            logits(PolicyParams.zeros(4, 3), 0, pos, prev)

    def test_shape_invariant(self):
        with pytest.raises(ValueError):
            PolicyParams(np.zeros((3, 4, 4)))

    def test_per_prompt_table(self):
        p = PolicyParams.zeros(3, 2, n_prompts=2)
        p.table[1, 0, 3, 0] = 2.0
        assert logits(p, 0, 0, 3)[0] == 0.0
        assert logits(p, 1, 0, 3)[0] == 2.0


class TestTempSoftmax:
    def test_uniform(self):
        for T in (0.1, 1.0, 7.0):
            np.testing.assert_allclose(temp_softmax([2.0, 2.0, 2.0], T), [1 / 3] * 3, atol=1e-15)

    def test_values(self):
        np.testing.assert_allclose(temp_softmax([1.0, 0.0], 1.0), [0.731059, 0.268941], atol=1e-6)
        np.testing.assert_allclose(temp_softmax([1.0, 0.0], 0.5), [0.880797, 0.119203], atol=1e-6)

    @pytest.mark.parametrize("T", [0.0, -1.0])
    def test_bad_temperature(self, T):
        with pytest.raises(ValueError):
            temp_softmax([1.0, 0.0], T)

    def test_nan(self):
        with pytest.raises(ValueError):
            temp_softmax([np.nan, 0.0], 1.0)

    @settings(max_examples=200, deadline=None)
    @given(
        z=arrays(np.float64, st.integers(2, 12), elements=st.floats(-1e3, 1e3)),
        T=st.floats(1e-3, 1e3),
    )
    def test_valid_distribution(self, z, T):
        p = temp_softmax(z, T)
        assert np.all(p >= 0) and np.all(p <= 1)
        assert abs(p.sum() - 1.0) < 1e-12

    @settings(max_examples=100, deadline=None)
    @given(z=arrays(np.float64, st.integers(2, 12), elements=st.floats(-100, 100)))
    def test_high_temperature_is_uniform(self, z):
        # deviation is about spread / (V * T), so the logit range is bounded
        p = temp_softmax(z, 1e6)
        assert np.max(np.abs(p - 1 / len(z))) < 1e-4

    @settings(max_examples=200, deadline=None)
    @given(
        z=arrays(np.int64, st.integers(2, 12), elements=st.integers(-500, 500), unique=True),
        T=st.floats(1e-2, 1e2),
    )
    def test_argmax_preserved(self, z, T):
        z = z * 0.1  # distinct logits at least 0.1 apart
        assert np.argmax(temp_softmax(z, T)) == np.argmax(z)


class TestSampleToken:
    def test_one_hot(self, rng):
        for _ in range(50):
            assert sample_token(np.array([0.0, 0.0, 1.0, 0.0]), rng) == 2

    def test_uniform_frequencies(self):
        rng = np.random.default_rng(7)
        draws = [sample_token(np.full(4, 0.25), rng) for _ in range(100_000)]
        freq = np.bincount(draws, minlength=4) / len(draws)
        assert np.all((freq >= 0.24) & (freq <= 0.26)), freq

    def test_seeded(self):
        d = np.array([0.1, 0.2, 0.3, 0.4])
        assert sample_token(d, np.random.default_rng(3)) == sample_token(d, np.random.default_rng(3))


class TestLogprobAndGrad:
    def test_uniform_policy(self):
        p = PolicyParams.zeros(4, 2)
        tr = random_traj(np.random.default_rng(0), p, 1)
        for T in (0.3, 1.0, 4.0):
            lp, _ = logprob_and_grad(p, tr, T)
            assert lp == pytest.approx(-np.log(4), abs=1e-12)

    def test_two_step_value(self):
        p = PolicyParams.zeros(2, 2)
        p.table[0, 2] = [1.0, 0.0]  # start state
        p.table[1, 0] = [0.0, 1.0]  # after token 0
        tr = make_traj(p.table[[0, 1], [2, 0]], [0, 0])
        lp, _ = logprob_and_grad(p, tr, 1.0)
        assert lp == pytest.approx(-1.626523, abs=1e-6)

    def test_uses_current_params(self):
        p = PolicyParams.zeros(3, 2)
        tr = make_traj(np.full((1, 3), 9.0), [1])  # stored logits ignored here
        lp, _ = logprob_and_grad(p, tr, 1.0)
        assert lp == pytest.approx(-np.log(3))

    def test_gradient_rows_sum_to_zero(self, rng):
        p = random_params(rng, 6, 4)
        tr = random_traj(rng, p, 4)
        _, g = logprob_and_grad(p, tr, 0.8)
        np.testing.assert_allclose(g.sum(axis=-1), 0.0, atol=1e-10)
        visited = np.zeros(g.shape[:2], dtype=bool)
        visited[np.arange(4), tr.prev_tokens] = True
        assert np.all(g[~visited] == 0)

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(100):
            V = int(rng.integers(2, 9))
            n = int(rng.integers(1, 6))
            p = random_params(rng, V, 5)
            tr = random_traj(rng, p, n)
            T = float(rng.uniform(0.5, 1.6))
            _, g = logprob_and_grad(p, tr, T)
            fd = central_diff(lambda x: logprob_and_grad(PolicyParams(x), tr, T)[0], p.table)
            worst = max(worst, rel_err(g, fd))
        assert worst < 1e-5

    def test_vocab_mismatch(self):
        with pytest.raises(ValueError):
            logprob_and_grad(PolicyParams.zeros(3, 2), make_traj(np.zeros((1, 4)), [0]), 1.0)


def test_generation_reads_only_visited_rows():
    """Unvisited rows set to NaN must not leak into rollouts."""
    V, L = 4, 3
    p = PolicyParams.zeros(V, L)
    p.table[:] = np.nan
    # force the path start -> 1 -> 2 -> 3
    for t, (prev, tok) in enumerate([(V, 1), (1, 2), (2, 3)]):
        p.table[t, prev] = -100.0
        p.table[t, prev, tok] = 100.0
    task = TaskSpec("target_exact", 0, L, target=(1, 2, 3))
    group = generate_group(p, task, 4, 1.0, np.random.default_rng(0))
    for tr in group.trajectories:
        assert tr.tokens.tolist() == [1, 2, 3]
        assert np.all(np.isfinite(tr.step_logits))
