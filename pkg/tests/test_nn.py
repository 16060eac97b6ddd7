import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cdpo.nn import (AdamState, NonFiniteError, ParamSet, backward, clip_by_global_norm, forward,
                     forward_tape, global_norm, init_params, optimizer_step, softmax)


def reference_forward(params, obs):
    """Plain per-sample matrix arithmetic, independent of the batched path."""
    def trunk(name, n):
        h = obs
        for i in range(n):
            w = params[f"{name}.{i}.weight"]
            b = params[f"{name}.{i}.bias"]
            h = np.array([sum(w[r, c] * h[c] for c in range(w.shape[1])) + b[r]
                          for r in range(w.shape[0])])
            if i < n - 1:
                h = np.tanh(h)
        return h
    return trunk("policy", params.n_layers("policy")), trunk("value", params.n_layers("value"))[0]


def central_diff(f, flat, h=1e-5):
    out = np.empty_like(flat)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        out[i] = (f(flat + e) - f(flat - e)) / (2 * h)
    return out


def rel_err(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


class TestInit:
    def test_cartpole_shapes(self):
        p = init_params(4, 2, seed=0)
        assert [p[f"policy.{i}.weight"].shape for i in range(3)] == [(64, 4), (64, 64), (2, 64)]
        assert [p[f"value.{i}.weight"].shape for i in range(3)] == [(64, 4), (64, 64), (1, 64)]
        assert all(np.all(p[k] == 0) for k in p if k.endswith("bias"))

    def test_deterministic(self):
        assert init_params(16, 8, seed=0).equal(init_params(16, 8, seed=0))
        assert not init_params(16, 8, seed=0).equal(init_params(16, 8, seed=1))

    @pytest.mark.parametrize("obs_dim, actions", [(4, 1), (4, 0), (0, 2)])
    def test_rejects_degenerate(self, obs_dim, actions):
        with pytest.raises(ValueError):
            init_params(obs_dim, actions, seed=0)

    def test_orthogonal_gains(self):
        p = init_params(4, 2, seed=3)
        w = p["policy.1.weight"]
        np.testing.assert_allclose(w @ w.T, 2.0 * np.eye(64), atol=1e-12)
        head = p["policy.2.weight"]
        np.testing.assert_allclose(head @ head.T, 1e-4 * np.eye(2), atol=1e-15)


class TestForward:
    def test_zero_network(self):
        p = init_params(5, 3, seed=0).zeros_like()
        logits, value = forward(p, np.arange(5.0))
        assert np.all(logits == 0) and value == 0

    def test_matches_reference(self):
        rng = np.random.default_rng(7)
        for k in range(5):
            p = init_params(6, 4, seed=k, hidden=(7, 5))
            p = p.with_flat(rng.normal(size=p.size))
            obs = rng.normal(size=6)
            logits, value = forward(p, obs)
            ref_l, ref_v = reference_forward(p, obs)
            np.testing.assert_allclose(logits, ref_l, rtol=0, atol=1e-12)
            assert abs(value - ref_v) < 1e-12

    def test_batch_equals_rows(self):
        rng = np.random.default_rng(0)
        p = init_params(4, 3, seed=0)
        obs = rng.normal(size=(5, 4))
        logits, values = forward(p, obs)
        for i in range(5):
            li, vi = forward(p, obs[i])
            np.testing.assert_allclose(logits[i], li, atol=1e-14)
            assert abs(values[i] - vi) < 1e-14

    def test_softmax_of_outputs_normalised(self):
        p = init_params(4, 2, seed=1)
        logits, _ = forward(p, np.ones(4))
        assert abs(softmax(logits).sum() - 1.0) < 1e-12


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(softmax(np.array([0.0, 0.0])), [0.5, 0.5])

    def test_large_logits(self):
        p = softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(p))
        assert p[0] == 1.0 and 0 <= p[1] < 1e-300

    def test_known_values(self):
        # oracle: direct exp/sum
        e = np.exp([1.0, 2.0, 3.0])
        np.testing.assert_allclose(e / e.sum(), [0.09003057, 0.24472847, 0.66524096], atol=1e-8)
        np.testing.assert_allclose(softmax(np.array([1.0, 2.0, 3.0])), e / e.sum(), atol=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(2, 20), elements=st.floats(-50, 50)),
           st.floats(-100, 100))
    def test_shift_invariance_and_normalisation(self, z, c):
        p = softmax(z)
        assert np.all(p > 0)
        assert abs(p.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(softmax(z + c), p, rtol=1e-9, atol=1e-14)


class TestBackward:
    def test_value_bias_grad_zero_network(self):
        p = init_params(4, 2, seed=0).zeros_like()
        _, _, tape = forward_tape(p, np.ones(4))
        g = backward(p, tape, np.zeros(2), np.array(1.0))
        assert g["value.2.bias"][0] == 1.0
        # zero activations everywhere else
        others = [k for k in g if k != "value.2.bias"]
        assert all(np.all(g[k] == 0) for k in others)

    def test_zero_loss_gives_zero_grads(self):
        p = init_params(4, 2, seed=0)
        _, _, tape = forward_tape(p, np.ones((3, 4)))
        g = backward(p, tape, np.zeros((3, 2)), np.zeros(3))
        assert np.all(g.flat() == 0)

    def test_rejects_foreign_tape(self):
        p = init_params(4, 2, seed=0)
        q = p.copy()
        _, _, tape = forward_tape(p, np.ones(4))
        with pytest.raises(ValueError):
            backward(q, tape, np.zeros(2), np.array(0.0))

    def test_finite_differences_100_cases(self):
        rng = np.random.default_rng(123)
        worst = 0.0
        for k in range(100):
            obs_dim, n_act = int(rng.integers(1, 5)), int(rng.integers(2, 5))
            p = init_params(obs_dim, n_act, seed=k, hidden=(4, 3))
            p = p.with_flat(rng.normal(scale=0.8, size=p.size))
            obs = rng.normal(size=(int(rng.integers(1, 4)), obs_dim))
            wl = rng.normal(size=(obs.shape[0], n_act))
            wv = rng.normal(size=obs.shape[0])

            # nonlinear scalar loss of both heads
            def loss_of(q):
                lg, v = forward(q, obs)
                return np.sum(wl * softmax(lg)) + np.sum(wv * np.sin(v))

            lg, v, tape = forward_tape(p, obs)
            sm = softmax(lg)
            dl = sm * (wl - np.sum(sm * wl, axis=1, keepdims=True))
            g = backward(p, tape, dl, wv * np.cos(v)).flat()
            fd = central_diff(lambda f: loss_of(p.with_flat(f)), p.flat())
            worst = max(worst, rel_err(g, fd).max())
        assert worst < 1e-5


class TestOptimizer:
    def _one_param(self, value=0.0):
        return ParamSet({"w": np.array([value])})

    def test_clip_arithmetic(self):
        g = ParamSet({"a": np.array([3.0]), "b": np.array([4.0])})
        assert global_norm(g) == 5.0
        clipped, norm = clip_by_global_norm(g, 0.5)
        assert norm == 5.0
        np.testing.assert_allclose(clipped["a"], [0.3], rtol=1e-15)
        np.testing.assert_allclose(clipped["b"], [0.4], rtol=1e-15)

    def test_no_clip_below_norm(self):
        g = ParamSet({"a": np.array([0.1])})
        assert clip_by_global_norm(g, 0.5)[0]["a"][0] == 0.1

    def test_zero_grads(self):
        p = init_params(3, 2, seed=0, hidden=(4, 4))
        p2, s2 = optimizer_step(p, p.zeros_like(), AdamState.zeros(p), 1e-3, 0.5)
        assert p2.equal(p)
        assert s2.step == 1

        warm = AdamState(m=p.with_flat(np.full(p.size, 0.5)), v=p.with_flat(np.full(p.size, 2.0)))
        _, s3 = optimizer_step(p, p.zeros_like(), warm, 1e-3, 0.5)
        np.testing.assert_array_equal(s3.m.flat(), 0.9 * 0.5)
        np.testing.assert_array_equal(s3.v.flat(), 0.999 * 2.0)

    def test_hand_rolled_recursion(self):
        # oracle: textbook Adam recursion, ascent direction
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        w, m, v = 0.0, 0.0, 0.0
        expected = []
        for t in range(1, 4):
            g = 1.0 * min(1.0, 0.5 / 1.0)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w = w + lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
            expected.append(w)
        p, s = self._one_param(), AdamState.zeros(self._one_param())
        for t in range(3):
            p, s = optimizer_step(p, ParamSet({"w": np.array([1.0])}), s, lr, 0.5)
            assert abs(p["w"][0] - expected[t]) < 1e-15
        assert s.step == 3

    def test_step_counter_increases(self):
        p = self._one_param()
        s = AdamState.zeros(p)
        steps = []
        for _ in range(4):
            p, s = optimizer_step(p, ParamSet({"w": np.array([0.2])}), s, 1e-3, 1.0)
            steps.append(s.step)
        assert steps == [1, 2, 3, 4]

    def test_non_finite_aborts(self):
        p = self._one_param(1.0)
        s = AdamState.zeros(p)
        with pytest.raises(NonFiniteError):
            optimizer_step(p, ParamSet({"w": np.array([np.nan])}), s, 1e-3, 0.5)
        assert p["w"][0] == 1.0 and s.step == 0

    def test_inputs_not_mutated(self):
        p = init_params(3, 2, seed=0, hidden=(4, 4))
        before = p.copy()
        g = p.with_flat(np.ones(p.size))
        optimizer_step(p, g, AdamState.zeros(p), 1e-3, 0.5)
        assert p.equal(before)

    def test_shape_mismatch(self):
        p = self._one_param()
        with pytest.raises(ValueError):
            optimizer_step(p, ParamSet({"w": np.zeros(2)}), AdamState.zeros(p), 1e-3, 0.5)
