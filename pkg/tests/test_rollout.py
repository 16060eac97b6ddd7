import numpy as np
import pytest

from cdpo.envs import EnvConfig, VecEnv
from cdpo.nn import init_params
from cdpo.rollout import RolloutBuffer, collect, compute_gae, minibatches, normalize, sample_actions


def make_buffer(rewards, terminated, values=None, truncated=None, boot=None, last=None):
    r = np.asarray(rewards, dtype=float).reshape(len(rewards), -1)
    T, N = r.shape
    values = np.zeros((T, N)) if values is None else np.asarray(values, float).reshape(T, N)
    return RolloutBuffer.from_arrays(
        obs=np.zeros((T, N, 1)), actions=np.zeros((T, N), int), rewards=r,
        terminated=np.asarray(terminated).reshape(T, N), values=values,
        log_probs=np.full((T, N), -0.5),
        truncated=None if truncated is None else np.asarray(truncated).reshape(T, N),
        bootstrap_values=None if boot is None else np.asarray(boot, float).reshape(T, N),
        last_values=last)


def brute_force_gae(r, v, term, trunc, boot, last, gamma, lam):
    """Oracle: explicit discounted sum of TD residuals up to the episode end."""
    T = len(r)
    deltas = []
    for t in range(T):
        nv = last if t == T - 1 else v[t + 1]
        if trunc[t]:
            nv = boot[t]
        deltas.append(r[t] + gamma * nv * (0.0 if term[t] else 1.0) - v[t])
    adv = []
    for t in range(T):
        total, k = 0.0, 0
        while t + k < T:
            total += (gamma * lam) ** k * deltas[t + k]
            if term[t + k] or trunc[t + k]:
                break
            k += 1
        adv.append(total)
    return np.array(adv)


class TestGAE:
    def test_one_step_termination(self):
        b = compute_gae(make_buffer([1.0], [True]), np.zeros(1), 0.98, 0.8)
        assert b.advantages[0, 0] == 1.0 and b.returns[0, 0] == 1.0

    def test_two_steps(self):
        b = compute_gae(make_buffer([1.0, 1.0], [False, False]), np.zeros(1), 0.98, 0.8)
        np.testing.assert_allclose(b.advantages[:, 0], [1.784, 1.0], rtol=1e-15)

    def test_lambda_zero_is_td_residual(self):
        rng = np.random.default_rng(0)
        r, v = rng.normal(size=(10, 1)), rng.normal(size=(10, 1))
        last = rng.normal(size=1)
        b = compute_gae(make_buffer(r, np.zeros(10, bool), v, last=last), None, 0.9, 0.0)
        nxt = np.append(v[1:, 0], last)
        np.testing.assert_allclose(b.advantages[:, 0], r[:, 0] + 0.9 * nxt - v[:, 0], atol=1e-14)

    def test_reward_to_go(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            T = int(rng.integers(1, 21))
            r = rng.normal(size=T)
            term = np.zeros(T, bool)
            term[-1] = True
            b = compute_gae(make_buffer(r, term), np.zeros(1), 1.0, 1.0)
            np.testing.assert_allclose(b.advantages[:, 0], np.cumsum(r[::-1])[::-1], atol=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            T = int(rng.integers(1, 30))
            r, v, boot = rng.normal(size=T), rng.normal(size=T), rng.normal(size=T)
            term = rng.random(T) < 0.1
            trunc = (rng.random(T) < 0.1) & ~term
            boot = np.where(trunc, boot, 0.0)
            last = rng.normal(size=1)
            b = compute_gae(make_buffer(r, term, v, trunc, boot, last), None, 0.98, 0.8)
            expected = brute_force_gae(r, v, term, trunc, boot, last[0], 0.98, 0.8)
            np.testing.assert_allclose(b.advantages[:, 0], expected, atol=1e-12)
            np.testing.assert_allclose(b.returns[:, 0], expected + v, atol=1e-12)

    def test_truncation_bootstraps(self):
        b_trunc = compute_gae(make_buffer([1.0], [False], truncated=[True], boot=[10.0]), np.zeros(1), 0.5, 0.8)
        b_term = compute_gae(make_buffer([1.0], [True], boot=[10.0]), np.zeros(1), 0.5, 0.8)
        assert b_trunc.advantages[0, 0] == 6.0
        assert b_term.advantages[0, 0] == 1.0

    def test_linear_in_rewards(self):
        rng = np.random.default_rng(3)
        r = rng.normal(size=(15, 2))
        term = rng.random((15, 2)) < 0.2
        a1 = compute_gae(make_buffer(r, term), np.zeros(2), 0.98, 0.8).advantages
        a2 = compute_gae(make_buffer(3.5 * r, term), np.zeros(2), 0.98, 0.8).advantages
        np.testing.assert_allclose(a2, 3.5 * a1, atol=1e-12)


class TestCollect:
    def test_buffer_size_and_fields(self):
        cfg = EnvConfig()
        venv = VecEnv(cfg, 8, seed=0)
        buf = collect(init_params(4, 2, seed=0), venv, 32, np.random.default_rng(0))
        assert buf.size == 256 and buf.obs.shape == (32, 8, 4)
        assert np.all(buf.log_probs <= 0)
        assert np.all(np.isfinite(buf.values))

    def test_deterministic(self):
        def go():
            venv = VecEnv(EnvConfig(kind="carterpillar", carts=2), 4, seed=5)
            return collect(init_params(8, 4, seed=1), venv, 40, np.random.default_rng(9))
        a, b = go(), go()
        for name in ("obs", "actions", "rewards", "terminated", "values", "log_probs"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_greedy_policy(self):
        p = init_params(4, 2, seed=0)
        p.arrays["policy.2.weight"][:] = 0.0
        p.arrays["policy.2.bias"][:] = [0.0, 60.0]
        venv = VecEnv(EnvConfig(), 8, seed=0)
        buf = collect(p, venv, 16, np.random.default_rng(0))
        assert np.all(buf.actions == 1)

    def test_sampling_frequencies(self):
        probs = np.tile([0.2, 0.5, 0.3], (100_000, 1))
        a = sample_actions(probs, np.random.default_rng(0))
        np.testing.assert_allclose(np.bincount(a) / len(a), [0.2, 0.5, 0.3], atol=0.01)

    def test_logged_log_probs_match_policy(self):
        from cdpo.nn import forward, log_softmax
        p = init_params(4, 2, seed=3)
        buf = collect(p, VecEnv(EnvConfig(), 2, seed=0), 8, np.random.default_rng(0))
        lp = log_softmax(forward(p, buf.obs.reshape(-1, 4))[0])
        np.testing.assert_allclose(lp[np.arange(16), buf.actions.ravel()], buf.log_probs.ravel(), atol=1e-15)

    def test_truncated_steps_get_bootstrap(self):
        cfg = EnvConfig(max_episode_steps=5)
        buf = collect(init_params(4, 2, seed=0), VecEnv(cfg, 2, seed=0), 12, np.random.default_rng(0))
        cut = buf.truncated & ~buf.terminated
        assert cut.any()
        assert np.all(buf.bootstrap_values[cut] != 0)
        assert np.all(buf.bootstrap_values[~cut] == 0)


class TestMinibatches:
    def _buffer(self, seed=0):
        rng = np.random.default_rng(seed)
        b = make_buffer(rng.normal(size=(32, 8)), np.zeros((32, 8), bool))
        return compute_gae(b, np.zeros(8), 0.98, 0.8)

    def test_single_batch(self):
        mbs = minibatches(self._buffer(), 256, np.random.default_rng(0))
        assert len(mbs) == 1
        adv = mbs[0].advantages
        assert abs(adv.mean()) < 1e-12 and abs(adv.std() - 1) < 1e-6

    def test_partition(self):
        mbs = minibatches(self._buffer(), 64, np.random.default_rng(0))
        idx = np.concatenate([m.indices for m in mbs])
        assert len(mbs) == 4
        np.testing.assert_array_equal(np.sort(idx), np.arange(256))

    def test_rows_line_up(self):
        buf = self._buffer()
        mb = minibatches(buf, 32, np.random.default_rng(1))[0]
        np.testing.assert_array_equal(mb.returns, buf.returns.ravel()[mb.indices])
        np.testing.assert_array_equal(mb.old_log_probs, buf.log_probs.ravel()[mb.indices])

    def test_constant_advantages(self):
        assert np.all(normalize(np.full(256, 3.0)) == 0.0)

    def test_idempotent(self):
        a = normalize(np.random.default_rng(0).normal(2.0, 5.0, size=64))
        assert np.max(np.abs(normalize(a) - a)) < 1e-7

    def test_non_divisible(self):
        with pytest.raises(ValueError):
            minibatches(self._buffer(), 100, np.random.default_rng(0))

    def test_requires_gae(self):
        b = make_buffer(np.zeros((4, 2)), np.zeros((4, 2), bool))
        with pytest.raises(ValueError):
            minibatches(b, 8, np.random.default_rng(0))
