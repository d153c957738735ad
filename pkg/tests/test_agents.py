import numpy as np
import pytest

from maclearn.agents import (AgentBundle, ObsEncoder, intrinsic_layout_for,
                             policy_layout_for)
from maclearn.env import Action, MacEnv, Observation
from maclearn.errors import ShapeError
from maclearn.nets import lstm_step


def reset_obs(p, m):
    return Observation(p, ((0, 0, 0),) * m, 0)


class TestEncoder:
    def test_width_p1_m3(self):
        enc = ObsEncoder(1, 3)
        assert enc.width == 2 + 3 * (2 + 6 + 3) == 35

    def test_width_p2_m3(self):
        assert ObsEncoder(2, 3).width == 3 + 3 * 12 == 39

    def test_reset_encoding_layout(self):
        enc = ObsEncoder(1, 3)
        vec = enc.encode(reset_obs(1, 3))
        assert vec.shape == (35,)
        assert vec[1] == 1.0  # current buffer level 1
        # padded steps: buffer and message one-hots at index 0, action zeroed
        for k in range(3):
            base = 2 + k * 11
            assert vec[base] == 1.0
            assert np.all(vec[base + 2:base + 8] == 0.0)
            assert vec[base + 8] == 1.0
        assert vec.sum() == 1 + 2 * 3

    def test_ones_count_tracks_real_history(self):
        env = MacEnv(2, 1, 3, 8)
        env.reset(0)
        enc = ObsEncoder(1, 3)
        for step in range(5):
            obs = env.observe(0)
            vec = enc.encode(obs)
            assert vec.sum() == 1 + 2 * 3 + min(step, 3)
            env.step([Action(1, 1), Action(0, 0)])

    def test_full_history_count(self):
        env = MacEnv(2, 2, 3, 8)
        env.reset(0)
        for _ in range(4):
            env.step([Action(1, 1), Action(0, 1)])
        vec = ObsEncoder(2, 3).encode(env.observe(0))
        assert vec.sum() == 1 + 3 * 3

    def test_out_of_range_rejected(self):
        enc = ObsEncoder(1, 2)
        with pytest.raises(ShapeError):
            enc.encode(Observation(5, ((0, 0, 0),) * 2, 0))
        with pytest.raises(ShapeError):
            enc.encode(Observation(1, ((0, 9, 0),) * 2, 2))
        with pytest.raises(ShapeError):
            enc.encode(reset_obs(1, 3))  # wrong memory length


def make_bundle(p=1, m=3, hidden=(4, 4), intrinsic_hidden=4, seed=0,
                with_intrinsic=True):
    enc = ObsEncoder(p, m)
    pl = policy_layout_for(enc, hidden)
    il = intrinsic_layout_for(enc, intrinsic_hidden) if with_intrinsic else None
    bundle = AgentBundle(0, pl, policy_seed=seed, act_seed=seed + 100,
                         intrinsic_layout=il, intrinsic_seed=seed + 200)
    return enc, bundle


class TestAct:
    def test_zero_policy_uniform_frequencies(self):
        enc, bundle = make_bundle(with_intrinsic=False)
        bundle.policy = np.zeros_like(bundle.policy)
        x = enc.encode(reset_obs(1, 3))
        counts = np.zeros(6)
        for _ in range(100_000):
            action, prob = bundle.act(x)
            counts[action] += 1
        freqs = counts / counts.sum()
        assert np.abs(freqs - 1 / 6).max() < 0.01

    def test_prob_matches_forward_entry(self):
        from maclearn.nets import mlp_forward
        enc, bundle = make_bundle(with_intrinsic=False, seed=3)
        x = enc.encode(reset_obs(1, 3))
        probs, _ = mlp_forward(bundle.policy_layout, bundle.policy, x)
        for _ in range(20):
            action, prob = bundle.act(x)
            assert prob == probs[action]

    def test_reproducible_with_fixed_stream(self):
        x = None
        seqs = []
        for _ in range(2):
            enc, bundle = make_bundle(with_intrinsic=False, seed=1)
            x = enc.encode(reset_obs(1, 3))
            seqs.append([bundle.act(x)[0] for _ in range(50)])
        assert seqs[0] == seqs[1]


class TestIntrinsicReward:
    def test_zero_eta_always_zero(self):
        enc, bundle = make_bundle()
        bundle.intrinsic = np.zeros_like(bundle.intrinsic)
        x = enc.encode(reset_obs(1, 3))
        for action in range(6):
            r, _ = bundle.intrinsic_reward(bundle.intrinsic_input(x, action))
            assert r == 0.0

    def test_state_dependence(self):
        enc, bundle = make_bundle(seed=5)
        x = enc.encode(reset_obs(1, 3))
        lstm_in = bundle.intrinsic_input(x, 2)
        r1, _ = bundle.intrinsic_reward(lstm_in)
        r2, _ = bundle.intrinsic_reward(lstm_in)
        assert r1 != r2

    def test_replay_purity(self):
        enc, bundle = make_bundle(seed=7)
        x = enc.encode(reset_obs(1, 3))
        inputs = [bundle.intrinsic_input(x, a) for a in (0, 3, 5, 1)]
        for lstm_in in inputs:
            bundle.intrinsic_reward(lstm_in)
        h_after, c_after = bundle.lstm_state()

        layout = bundle.intrinsic_layout
        h = np.zeros(layout.hidden)
        c = np.zeros(layout.hidden)
        for lstm_in in inputs:
            _, h, c, _ = lstm_step(layout, bundle.intrinsic, lstm_in, h, c)
        assert np.array_equal(h, h_after)
        assert np.array_equal(c, c_after)

    def test_lifetime_reset_zeroes_state(self):
        enc, bundle = make_bundle(seed=2)
        x = enc.encode(reset_obs(1, 3))
        bundle.intrinsic_reward(bundle.intrinsic_input(x, 0))
        bundle.reset_lifetime_state()
        assert np.all(bundle.lstm_h == 0.0)
        assert np.all(bundle.lstm_c == 0.0)

    def test_rext_feature_changes_input_width(self):
        enc = ObsEncoder(1, 3)
        without = intrinsic_layout_for(enc, 4, sees_rext=False)
        with_r = intrinsic_layout_for(enc, 4, sees_rext=True)
        assert with_r.input_dim == without.input_dim + 1


class TestGradLogprob:
    def test_expected_score_zero(self):
        from maclearn.nets import mlp_forward
        enc, bundle = make_bundle(with_intrinsic=False, seed=4)
        x = enc.encode(reset_obs(1, 3))
        probs, _ = mlp_forward(bundle.policy_layout, bundle.policy, x)
        total = sum(probs[a] * bundle.grad_logprob(x, a) for a in range(6))
        assert np.abs(total).max() < 1e-10

    def test_deterministic(self):
        enc, bundle = make_bundle(with_intrinsic=False, seed=4)
        x = enc.encode(reset_obs(1, 3))
        assert np.array_equal(bundle.grad_logprob(x, 3),
                              bundle.grad_logprob(x, 3))
