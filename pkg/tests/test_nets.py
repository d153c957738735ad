import numpy as np
import pytest

from maclearn.errors import NumericError, ProtocolError, ShapeError
from maclearn.nets import (AdamState, LstmLayout, MlpLayout, apply_ascent,
                           clip_global_norm, init_params, lstm_bptt,
                           lstm_step, mlp_forward, mlp_logprob_grad,
                           sample_categorical)

FD_H = 1e-6


def rel_error(a, b):
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return np.linalg.norm(a - b) / denom


def central_diff(fn, flat, h=FD_H):
    grad = np.zeros_like(flat)
    for j in range(flat.size):
        up = flat.copy()
        up[j] += h
        down = flat.copy()
        down[j] -= h
        grad[j] = (fn(up) - fn(down)) / (2 * h)
    return grad


class TestMlpForward:
    def test_zero_params_uniform(self):
        layout = MlpLayout(5, (4, 4), 6)
        probs, _ = mlp_forward(layout, np.zeros(layout.n_params),
                               np.ones(5))
        assert np.allclose(probs, 1.0 / 6, atol=1e-15)

    def test_normalized_over_random_draws(self):
        rng = np.random.default_rng(0)
        layout = MlpLayout(7, (5, 5), 6)
        for _ in range(100):
            flat = rng.normal(scale=0.7, size=layout.n_params)
            probs, _ = mlp_forward(layout, flat, rng.normal(size=7))
            assert abs(probs.sum() - 1.0) < 1e-12
            assert (probs > 0).all()

    def test_bias_shift_invariance(self):
        rng = np.random.default_rng(1)
        layout = MlpLayout(4, (3,), 6)
        flat = init_params(layout, 3)
        x = rng.normal(size=4)
        base, _ = mlp_forward(layout, flat, x)
        shifted = flat.copy()
        layout.view(shifted, "b1")[:] += 17.5
        moved, _ = mlp_forward(layout, shifted, x)
        assert np.allclose(base, moved, atol=1e-12)

    def test_large_logits_do_not_overflow(self):
        layout = MlpLayout(2, (2,), 6)
        flat = np.zeros(layout.n_params)
        layout.view(flat, "b1")[:] = [700, -700, 0, 0, 350, -350]
        probs, _ = mlp_forward(layout, flat, np.zeros(2))
        assert np.isfinite(probs).all()
        assert abs(probs.sum() - 1.0) < 1e-12

    def test_shape_and_numeric_errors(self):
        layout = MlpLayout(4, (3,), 6)
        flat = init_params(layout, 0)
        with pytest.raises(ShapeError):
            mlp_forward(layout, flat, np.zeros(5))
        with pytest.raises(NumericError):
            mlp_forward(layout, flat, np.array([1.0, np.nan, 0.0, 0.0]))
        with pytest.raises(ShapeError):
            mlp_forward(layout, flat[:-1], np.zeros(4))


class TestMlpGrad:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        layout = MlpLayout(int(rng.integers(2, 9)),
                           (int(rng.integers(2, 9)), int(rng.integers(2, 9))),
                           6)
        flat = init_params(layout, seed) + rng.normal(
            scale=0.3, size=layout.n_params)
        x = rng.normal(size=layout.input_dim)
        action = int(rng.integers(6))
        _, cache = mlp_forward(layout, flat, x)
        analytic = mlp_logprob_grad(layout, flat, cache, action)

        def logprob(p):
            probs, _ = mlp_forward(layout, p, x)
            return np.log(probs[action])

        assert rel_error(analytic, central_diff(logprob, flat)) < 1e-5

    def test_zero_params_softmax_local_grad(self):
        layout = MlpLayout(3, (2,), 6)
        flat = np.zeros(layout.n_params)
        _, cache = mlp_forward(layout, flat, np.ones(3))
        grad = mlp_logprob_grad(layout, flat, cache, 2)
        bias_grad = layout.view(grad, "b1")
        expected = -np.full(6, 1.0 / 6)
        expected[2] += 1.0
        assert np.allclose(bias_grad, expected, atol=1e-15)

    def test_expected_score_is_zero(self):
        rng = np.random.default_rng(9)
        layout = MlpLayout(4, (3, 3), 6)
        flat = init_params(layout, 1)
        x = rng.normal(size=4)
        probs, _ = mlp_forward(layout, flat, x)
        total = np.zeros(layout.n_params)
        for action in range(6):
            _, cache = mlp_forward(layout, flat, x)
            total += probs[action] * mlp_logprob_grad(layout, flat, cache,
                                                      action)
        assert np.abs(total).max() < 1e-10

    def test_stale_cache_rejected(self):
        layout = MlpLayout(3, (2,), 6)
        flat = init_params(layout, 0)
        _, cache = mlp_forward(layout, flat, np.zeros(3))
        other = flat.copy()
        with pytest.raises(ProtocolError):
            mlp_logprob_grad(layout, other, cache, 0)


class TestLstmStep:
    def test_zero_params_zero_output(self):
        layout = LstmLayout(4, 3)
        flat = np.zeros(layout.n_params)
        r, h, c, _ = lstm_step(layout, flat, np.ones(4), np.zeros(3),
                               np.zeros(3))
        assert r == 0.0
        assert np.all(h == 0.0) and np.all(c == 0.0)

    def test_statefulness(self):
        layout = LstmLayout(3, 4)
        flat = init_params(layout, 2)
        x = np.array([1.0, -0.5, 0.25])
        h = np.zeros(4)
        c = np.zeros(4)
        outs = []
        for _ in range(3):
            r, h, c, _ = lstm_step(layout, flat, x, h, c)
            outs.append(r)
        assert len(set(outs)) > 1

    def test_hidden_bounded_by_one(self):
        rng = np.random.default_rng(4)
        layout = LstmLayout(5, 6)
        for _ in range(20):
            flat = rng.normal(scale=2.0, size=layout.n_params)
            _, h, _, _ = lstm_step(layout, flat, rng.normal(size=5),
                                   rng.normal(size=6), rng.normal(size=6))
            assert np.abs(h).max() <= 1.0

    def test_dimension_mismatch(self):
        layout = LstmLayout(4, 3)
        flat = init_params(layout, 0)
        with pytest.raises(ShapeError):
            lstm_step(layout, flat, np.zeros(5), np.zeros(3), np.zeros(3))


class TestLstmBptt:
    @pytest.mark.parametrize("seed,steps", [(0, 1), (1, 3), (2, 5)])
    def test_matches_finite_differences(self, seed, steps):
        rng = np.random.default_rng(seed)
        layout = LstmLayout(int(rng.integers(2, 9)), int(rng.integers(2, 9)))
        flat = init_params(layout, seed) + rng.normal(
            scale=0.2, size=layout.n_params)
        xs = [rng.normal(size=layout.input_dim) for _ in range(steps)]
        upstream = list(rng.normal(size=steps))

        def objective(p):
            h = np.zeros(layout.hidden)
            c = np.zeros(layout.hidden)
            total = 0.0
            for x, u in zip(xs, upstream):
                r, h, c, _ = lstm_step(layout, p, x, h, c)
                total += u * r
            return total

        h = np.zeros(layout.hidden)
        c = np.zeros(layout.hidden)
        caches = []
        for x in xs:
            _, h, c, cache = lstm_step(layout, flat, x, h, c)
            caches.append(cache)
        analytic, _ = lstm_bptt(layout, flat, caches, upstream)
        assert rel_error(analytic, central_diff(objective, flat)) < 1e-5

    def test_tanh_head_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        layout = LstmLayout(3, 4, head_activation="tanh")
        flat = init_params(layout, 1)
        xs = [rng.normal(size=3) for _ in range(3)]
        upstream = [1.0, -0.5, 2.0]

        def objective(p):
            h = np.zeros(4)
            c = np.zeros(4)
            total = 0.0
            for x, u in zip(xs, upstream):
                r, h, c, _ = lstm_step(layout, p, x, h, c)
                total += u * r
            return total

        h = np.zeros(4)
        c = np.zeros(4)
        caches = []
        for x in xs:
            _, h, c, cache = lstm_step(layout, flat, x, h, c)
            caches.append(cache)
        analytic, _ = lstm_bptt(layout, flat, caches, upstream)
        assert rel_error(analytic, central_diff(objective, flat)) < 1e-5

    def test_zero_upstream_zero_gradient(self):
        layout = LstmLayout(3, 4)
        flat = init_params(layout, 7)
        h = np.zeros(4)
        c = np.zeros(4)
        caches = []
        for _ in range(4):
            _, h, c, cache = lstm_step(layout, flat, np.ones(3), h, c)
            caches.append(cache)
        grad, _ = lstm_bptt(layout, flat, caches, [0.0] * 4)
        assert np.all(grad == 0.0)

    def test_zero_recurrence_makes_steps_additive(self):
        # kill both recurrence paths: zero hidden weights and a forget gate
        # saturated exactly shut
        layout = LstmLayout(3, 4)
        flat = init_params(layout, 3)
        layout.view(flat, "Wh")[:] = 0.0
        layout.view(flat, "b_f")[:] = -800.0  # sigmoid underflows to 0.0
        xs = [np.array([0.3, -1.0, 0.7]), np.array([-0.2, 0.5, 1.1])]
        h = np.zeros(4)
        c = np.zeros(4)
        caches = []
        for x in xs:
            _, h, c, cache = lstm_step(layout, flat, x, h, c)
            caches.append(cache)
        combined, _ = lstm_bptt(layout, flat, caches, [1.0, 1.0])
        first, _ = lstm_bptt(layout, flat, caches[:1], [1.0])
        second, _ = lstm_bptt(layout, flat, caches[1:], [1.0])
        assert np.allclose(combined, first + second, atol=1e-12)

    def test_window_chaining_equals_full_pass(self):
        rng = np.random.default_rng(8)
        layout = LstmLayout(4, 5)
        flat = init_params(layout, 8)
        h = np.zeros(5)
        c = np.zeros(5)
        caches = []
        for _ in range(6):
            _, h, c, cache = lstm_step(layout, flat, rng.normal(size=4), h, c)
            caches.append(cache)
        upstream = list(rng.normal(size=6))
        full, _ = lstm_bptt(layout, flat, caches, upstream)
        tail, state_grad = lstm_bptt(layout, flat, caches[3:], upstream[3:])
        head, _ = lstm_bptt(layout, flat, caches[:3], upstream[:3],
                            state_grad_in=state_grad)
        assert np.allclose(full, head + tail, atol=1e-12)

    def test_non_contiguous_caches_rejected(self):
        layout = LstmLayout(3, 4)
        flat = init_params(layout, 0)
        h = np.zeros(4)
        c = np.zeros(4)
        _, h1, c1, cache1 = lstm_step(layout, flat, np.ones(3), h, c)
        _, _, _, cache2 = lstm_step(layout, flat, np.ones(3), h, c)  # fork
        with pytest.raises(ProtocolError):
            lstm_bptt(layout, flat, [cache1, cache2], [1.0, 1.0])

    def test_stale_cache_rejected(self):
        layout = LstmLayout(3, 4)
        flat = init_params(layout, 0)
        _, _, _, cache = lstm_step(layout, flat, np.ones(3), np.zeros(4),
                                   np.zeros(4))
        with pytest.raises(ProtocolError):
            lstm_bptt(layout, flat.copy(), [cache], [1.0])


class TestInit:
    def test_deterministic_in_seed(self):
        layout = MlpLayout(6, (4, 4), 6)
        assert np.array_equal(init_params(layout, 42), init_params(layout, 42))
        assert not np.array_equal(init_params(layout, 42),
                                  init_params(layout, 43))

    def test_weights_within_declared_bounds(self):
        for layout in (MlpLayout(6, (4, 4), 6), LstmLayout(5, 7)):
            flat = init_params(layout, 12)
            for spec in layout.specs:
                block = flat[spec.start:spec.stop]
                if spec.init == "xavier":
                    assert np.abs(block).max() <= spec.xavier_bound
                elif spec.init == "zero":
                    assert np.all(block == 0.0)

    def test_forget_gate_bias_exactly_one(self):
        layout = LstmLayout(5, 7)
        flat = init_params(layout, 0)
        assert np.all(layout.view(flat, "b_f") == 1.0)


class TestAscent:
    def test_rate_zero_unchanged(self):
        params = np.arange(5.0)
        out = apply_ascent(params, np.ones(5), 0.0)
        assert np.array_equal(out, params)

    def test_basis_vector_update(self):
        params = np.zeros(5)
        grad = np.zeros(5)
        grad[3] = 1.0
        out = apply_ascent(params, grad, 0.25)
        assert out[3] == 0.25 and np.count_nonzero(out) == 1

    def test_clip_bounds_update_norm(self):
        grad = np.full(4, 5.0)  # norm 10
        clipped = clip_global_norm(grad, 1.0)
        assert abs(np.linalg.norm(clipped) - 1.0) < 1e-12
        out = apply_ascent(np.zeros(4), grad, 0.5, clip=1.0)
        assert abs(np.linalg.norm(out) - 0.5) < 1e-12

    def test_clip_zero_disables(self):
        grad = np.full(4, 5.0)
        assert np.array_equal(clip_global_norm(grad, 0.0), grad)

    def test_non_finite_gradient_aborts(self):
        with pytest.raises(NumericError):
            apply_ascent(np.zeros(3), np.array([1.0, np.inf, 0.0]), 0.1)


class TestAdam:
    def test_moves_toward_gradient(self):
        state = AdamState(3)
        step = state.ascent_step(np.array([1.0, -2.0, 0.0]), 0.1)
        assert step[0] > 0 and step[1] < 0 and step[2] == 0.0


class TestSampling:
    def test_deterministic_given_stream(self):
        probs = np.array([0.1, 0.2, 0.3, 0.1, 0.2, 0.1])
        a = [sample_categorical(np.random.default_rng(5), probs)
             for _ in range(3)]
        assert len(set(a)) == 1

    def test_respects_distribution(self):
        rng = np.random.default_rng(0)
        probs = np.array([0.5, 0.5, 0.0, 0.0, 0.0, 0.0])
        draws = [sample_categorical(rng, probs) for _ in range(2000)]
        assert set(draws) <= {0, 1}
        assert abs(np.mean([d == 0 for d in draws]) - 0.5) < 0.05
