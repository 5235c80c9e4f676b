import numpy as np
import pytest

from vsumrl.errors import NumericsError
from vsumrl.model import ModelConfig, forward, init_params
from vsumrl.rewards import RewardBundle, RewardConfig
from vsumrl.synth import SyntheticSpec, generate_dataset
from vsumrl.training import (
    Adam,
    BaselineState,
    TrainConfig,
    TrainState,
    l2_loss,
    log_policy,
    log_policy_gradient_weights,
    percentage_loss,
    record_inputs,
    sample_episode,
    surrogate_gradients,
    surrogate_objective,
    train,
    train_step,
)

from conftest import make_record
from test_model import finite_difference, max_relative_error


TINY_MODEL = ModelConfig(
    hidden_size=8, num_layers=1, num_heads=2, max_frames=64, max_sentences=8,
    frame_dim=6, sentence_dim=4,
    dropout_attn=0.0, dropout_expert=0.0, dropout_head=0.0)


def fresh_state(cfg: TrainConfig, model_cfg: ModelConfig = TINY_MODEL) -> TrainState:
    params = init_params(model_cfg, seed=cfg.seed)
    return TrainState(
        params=params,
        optimizer=Adam(params, lr=cfg.learning_rate, beta1=cfg.adam_beta1,
                       beta2=cfg.adam_beta2, eps=cfg.adam_eps),
        baseline=BaselineState(),
        rng=np.random.default_rng(cfg.seed),
    )


class TestSampleEpisode:
    def test_near_one_probabilities(self):
        p = np.full(50, 0.999999)
        actions = sample_episode(p, np.random.default_rng(0))
        assert actions.sum() == 50

    def test_deterministic_for_seed(self):
        p = np.random.default_rng(3).random(20)
        a = sample_episode(p, np.random.default_rng(5))
        b = sample_episode(p, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_empirical_rate(self):
        p = np.full(10_000, 0.3)
        actions = sample_episode(p, np.random.default_rng(11))
        assert abs(actions.mean() - 0.3) < 0.02


class TestLogPolicyGradient:
    def test_zero_advantage(self, rng):
        p = rng.uniform(0.2, 0.8, 10)
        actions = sample_episode(p, rng)
        np.testing.assert_array_equal(
            log_policy_gradient_weights(p, actions, reward_total=0.7, b=0.7),
            np.zeros(10))

    def test_known_value(self):
        out = log_policy_gradient_weights(
            np.array([0.5]), np.array([1]), reward_total=1.0, b=0.0)
        assert out[0] == pytest.approx(-2.0)

    def test_matches_finite_differences(self, rng):
        p = rng.uniform(0.2, 0.8, 8)
        actions = sample_episode(p, rng)
        reward, b = 1.3, 0.4
        analytic = log_policy_gradient_weights(p, actions, reward, b)
        h = 1e-7
        for t in range(8):
            dp = np.zeros(8)
            dp[t] = h
            fd = (-(reward - b) * log_policy(p + dp, actions)
                  - (-(reward - b) * log_policy(p - dp, actions))) / (2 * h)
            assert analytic[t] == pytest.approx(fd, rel=1e-5)

    def test_rejects_boundary_probabilities(self):
        with pytest.raises(NumericsError):
            log_policy_gradient_weights(np.array([0.0, 0.5]), np.array([1, 0]), 1.0, 0.0)


class TestPercentageLoss:
    def test_on_target(self):
        loss, grad = percentage_loss(np.full(4, 0.5), 0.5)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, np.zeros(4))

    def test_known_value(self):
        loss, grad = percentage_loss(np.array([1.0, 1.0]), 0.5)
        assert loss == pytest.approx(0.25)
        np.testing.assert_allclose(grad, [0.5, 0.5])

    def test_matches_finite_differences(self, rng):
        p = rng.uniform(0.1, 0.9, 6)
        _, grad = percentage_loss(p, 0.35)
        h = 1e-7
        for t in range(6):
            dp = np.zeros(6)
            dp[t] = h
            fd = (percentage_loss(p + dp, 0.35)[0] - percentage_loss(p - dp, 0.35)[0]) / (2 * h)
            assert grad[t] == pytest.approx(fd, rel=1e-5, abs=1e-10)


class TestL2Loss:
    def test_zero_params(self):
        params = init_params(TINY_MODEL, seed=0)
        for arr in params.tensors.values():
            arr[:] = 0.0
        loss, grads = l2_loss(params)
        assert loss == 0.0
        assert all(not g.any() for g in grads.values())

    def test_single_weight(self):
        params = init_params(TINY_MODEL, seed=0)
        for arr in params.tensors.values():
            arr[:] = 0.0
        params.tensors["head.w2"][0, 0] = 3.0
        loss, grads = l2_loss(params)
        assert loss == pytest.approx(9.0)
        assert grads["head.w2"][0, 0] == pytest.approx(6.0)

    def test_matches_elementwise_oracle(self):
        params = init_params(TINY_MODEL, seed=4)
        loss, grads = l2_loss(params)
        want = sum(float(v) ** 2 for arr in params.tensors.values() for v in arr.ravel())
        assert loss == pytest.approx(want, rel=1e-12)
        for name, arr in params.tensors.items():
            np.testing.assert_allclose(grads[name], 2.0 * arr)


class TestTrainStep:
    def test_zero_gradient_leaves_params_unchanged(self, rng):
        cfg = TrainConfig(episodes=3, learning_rate=1e-2, beta1=0.0, beta2=0.0, seed=0)
        state = fresh_state(cfg)
        record = make_record(rng, frame_count=12)
        constant = RewardBundle(r_div=0.3, r_rep=0.3, r_sal=0.1, total=0.7)
        state.baseline.values[record.video_id] = 0.7
        before = {k: v.copy() for k, v in state.params.tensors.items()}
        train_step(state, record, cfg, RewardConfig(), reward_fn=lambda r, a: constant)
        for name in before:
            np.testing.assert_array_equal(state.params.tensors[name], before[name])

    def test_deterministic(self, rng):
        record = make_record(rng, frame_count=10)
        cfg = TrainConfig(episodes=4, learning_rate=1e-3, seed=7)
        results = []
        for _ in range(2):
            state = fresh_state(cfg)
            train_step(state, record, cfg, RewardConfig())
            results.append({k: v.copy() for k, v in state.params.tensors.items()})
        for name in results[0]:
            np.testing.assert_array_equal(results[0][name], results[1][name])

    def test_surrogate_gradient_matches_finite_differences(self, rng):
        model_cfg = ModelConfig(
            hidden_size=4, num_layers=1, num_heads=2, max_frames=8, max_sentences=2,
            frame_dim=3, sentence_dim=2,
            dropout_attn=0.0, dropout_expert=0.0, dropout_head=0.0)
        cfg = TrainConfig(episodes=3, beta1=0.12, beta2=1e-3, seed=1)
        params = init_params(model_cfg, seed=1)
        record = make_record(rng, frame_count=5, spans=[(1, 3, 0.8)],
                             frame_dim=3, sentence_dim=2)

        x, y, alignment = record_inputs(record, cfg.unimodal)
        trace = forward(params, x, y, alignment, mode="eval")
        ep_rng = np.random.default_rng(2)
        episodes = [sample_episode(trace.p, ep_rng) for _ in range(cfg.episodes)]
        rewards = [0.9, 0.3, 0.6]
        b = 0.5

        analytic = surrogate_gradients(params, trace, episodes, rewards, b, cfg)
        numeric = finite_difference(
            params,
            lambda p: surrogate_objective(p, record, episodes, rewards, b, cfg))
        assert max_relative_error(analytic, numeric) < 1e-4

    def test_reinforce_increases_p_for_selection_count_reward(self, rng):
        # contrived reward: more selected frames, more reward
        record = make_record(rng, frame_count=16)
        cfg = TrainConfig(episodes=5, learning_rate=5e-3, beta1=0.0, beta2=0.0, seed=3)
        state = fresh_state(cfg)

        def count_reward(r, actions):
            n = float(np.sum(actions))
            return RewardBundle(r_div=0.0, r_rep=0.0, r_sal=n, total=n)

        def mean_p():
            x, y, alignment = record_inputs(record, False)
            return float(forward(state.params, x, y, alignment).p.mean())

        levels = [mean_p()]
        for _ in range(4):
            for _ in range(5):
                train_step(state, record, cfg, RewardConfig(), reward_fn=count_reward)
            levels.append(mean_p())
        assert all(b > a for a, b in zip(levels, levels[1:]))

    def test_gradient_invariant_to_episode_order(self, rng):
        record = make_record(rng, frame_count=8)
        cfg = TrainConfig(episodes=4, seed=0)
        params = init_params(TINY_MODEL, seed=0)
        x, y, alignment = record_inputs(record, False)
        trace = forward(params, x, y, alignment)
        ep_rng = np.random.default_rng(1)
        episodes = [sample_episode(trace.p, ep_rng) for _ in range(4)]
        rewards = [1.0, 0.2, 0.7, 0.4]

        g1 = surrogate_gradients(params, trace, episodes, rewards, 0.5, cfg)
        order = [2, 0, 3, 1]
        g2 = surrogate_gradients(params, trace, [episodes[i] for i in order],
                                 [rewards[i] for i in order], 0.5, cfg)
        for name in g1:
            np.testing.assert_allclose(g1[name], g2[name], atol=1e-12)


class TestBaseline:
    def test_first_visit_initializes_to_mean(self):
        state = BaselineState()
        b = state.peek("v", fallback=0.8)
        assert b == 0.8
        state.update("v", b, reward_mean=0.8, decay=0.9)
        assert state.values["v"] == pytest.approx(0.8)

    def test_ema_update(self):
        state = BaselineState()
        state.values["v"] = 1.0
        b = state.peek("v", fallback=0.0)
        state.update("v", b, reward_mean=0.0, decay=0.9)
        assert state.values["v"] == pytest.approx(0.9)


class TestTrainLoop:
    def test_bookkeeping(self, rng):
        records = [make_record(rng, frame_count=8, video_id=f"v{i}") for i in range(3)]
        cfg = TrainConfig(epochs=1, episodes=2, learning_rate=1e-4, seed=0)
        _, rows, state = train(records, TINY_MODEL, cfg, RewardConfig())
        assert len(rows) == 1
        assert set(rows[0]) == {"epoch", "mean_r_div", "mean_r_rep", "mean_r_sal",
                                "mean_total", "mean_p"}
        assert len(state.baseline.values) == 3

    def test_deterministic_end_to_end(self, rng):
        records = [make_record(rng, frame_count=8, video_id=f"v{i}") for i in range(2)]
        cfg = TrainConfig(epochs=2, episodes=2, learning_rate=1e-3, seed=9)
        p1, rows1, _ = train(records, TINY_MODEL, cfg, RewardConfig())
        p2, rows2, _ = train(records, TINY_MODEL, cfg, RewardConfig())
        assert rows1 == rows2
        for name in p1.tensors:
            np.testing.assert_array_equal(p1.tensors[name], p2.tensors[name])

    def test_reward_trend_and_fraction_on_planted_data(self, tmp_path):
        spec = SyntheticSpec(num_videos=4, frames_per_video=32, frame_dim=8,
                             sentence_dim=6, clusters=2, sentences_per_video=4,
                             salient_fraction=0.25, noise=0.2, seed=5)
        manifest = generate_dataset(spec, tmp_path)
        model_cfg = ModelConfig(
            hidden_size=8, num_layers=1, num_heads=2, max_frames=64, max_sentences=8,
            frame_dim=8, sentence_dim=6,
            dropout_attn=0.1, dropout_expert=0.1, dropout_head=0.5)
        cfg = TrainConfig(epochs=10, episodes=5, learning_rate=5e-3,
                          epsilon=0.5, beta1=2.0, beta2=1e-5, seed=5)
        _, rows, _ = train(manifest, model_cfg, cfg, RewardConfig())
        assert rows[-1]["mean_total"] >= rows[0]["mean_total"]
        assert abs(rows[-1]["mean_p"] - 0.5) <= abs(rows[0]["mean_p"] - 0.5) + 0.02
