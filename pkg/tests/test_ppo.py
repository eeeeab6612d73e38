import json
import math

import numpy as np
import pytest

from app.config import load_config
from app.environment import EnvConfig, observation
from app.errors import CheckpointError, DegenerateStateError, InvalidParameterError
from app.measurement import Strategy
from app.physics import PopulationState
from app.ppo import (
    ActorCritic,
    Batch,
    PPOConfig,
    PPOTrainer,
    collect_episodes,
    compute_advantages,
    generate_sequence,
    load_policy,
    save_policy,
    train,
)
from app.search import exhaustive_best
from app.sequence import MeasurementSequence, run_sequence

SMALL = PPOConfig(
    obs_size=16,
    hidden_sizes=(8,),
    episodes_per_batch=4,
    minibatch_size=8,
    update_epochs=2,
    max_iterations=3,
    min_iterations=1,
    log_every=1,
)


@pytest.fixture
def env_config(thermal, params):
    return EnvConfig(initial=thermal, params=params, n_rounds=4, obs_size=16)


def _policy(obs_size=16, seed=0):
    return ActorCritic(obs_size, (8,), np.random.default_rng(seed))


class TestEnvironment:
    def test_observation_pads_and_truncates(self):
        state = PopulationState.from_populations([0.5, 0.5])
        assert observation(state, 4).tolist() == [0.5, 0.5, 0.0, 0.0]

    def test_episode_matches_sequence_run(self, env_config, thermal, params):
        env = env_config.make()
        env.reset()
        actions = [1, 0, 1, 1]
        rewards, taus = [], []
        for a in actions:
            _, reward, done, info = env.step(a)
            rewards.append(reward)
            taus.append(info["tau"])
        assert done
        trace = run_sequence(thermal, MeasurementSequence.parse("1011"), params)
        assert taus == trace.intervals
        assert rewards == [100.0 * r.C for r in trace.records]

    def test_final_reward_mode(self, thermal, params):
        env = EnvConfig(initial=thermal, params=params, n_rounds=3, obs_size=16, reward_mode="final").make()
        rewards = [env.step(1)[1] for _ in range(3)]
        assert rewards[:2] == [0.0, 0.0]
        assert rewards[2] == pytest.approx(100.0 * env.last_C)

    def test_step_after_done_is_rejected(self, thermal, params):
        env = EnvConfig(initial=thermal, params=params, n_rounds=1, obs_size=16).make()
        env.step(0)
        with pytest.raises(InvalidParameterError):
            env.step(0)

    def test_ground_state_steps_are_noops(self, params):
        env = EnvConfig(initial=PopulationState.pure(0, 3), params=params, n_rounds=2, obs_size=4).make()
        _, reward, _, info = env.step(Strategy.CM)
        assert info["degenerate"]
        assert reward == 0.0


class TestCollection:
    def test_batch_layout(self, env_config):
        batch = collect_episodes(_policy(), env_config, 3, np.random.default_rng(0))
        assert len(batch) == 12
        assert [len(a) for a in batch.episode_actions] == [4, 4, 4]
        assert batch.dones.sum() == 3
        assert batch.observations.shape == (12, 16)

    def test_stored_observations_are_the_pre_action_states(self, env_config, thermal):
        batch = collect_episodes(_policy(), env_config, 2, np.random.default_rng(0))
        np.testing.assert_array_equal(batch.observations[0], observation(thermal, 16))
        assert not np.array_equal(batch.observations[1], batch.observations[0])

    def test_same_rng_same_batch(self, env_config):
        a = collect_episodes(_policy(), env_config, 5, np.random.default_rng(42))
        b = collect_episodes(_policy(), env_config, 5, np.random.default_rng(42))
        assert a.episode_actions == b.episode_actions
        np.testing.assert_array_equal(a.rewards, b.rewards)

    def test_greedy_needs_no_rng(self, env_config):
        batch = collect_episodes(_policy(), env_config, 2, None, greedy=True)
        assert batch.episode_actions[0] == batch.episode_actions[1]


def _hand_batch(rewards, dones, values=None):
    n = len(rewards)
    return Batch(
        observations=np.zeros((n, 2)),
        actions=np.zeros(n, dtype=np.int64),
        log_probs=np.zeros(n),
        rewards=np.array(rewards, dtype=float),
        values=np.zeros(n) if values is None else np.array(values, dtype=float),
        dones=np.array(dones),
        episode_totals=np.zeros(2),
        episode_final_C=np.zeros(2),
        episode_actions=[],
    )


class TestAdvantages:
    def test_monte_carlo_limit(self):
        batch = compute_advantages(_hand_batch([1.0, 2.0, 5.0], [False, True, True]), 1.0, 1.0, normalize=False)
        np.testing.assert_allclose(batch.advantages, [3.0, 2.0, 5.0])
        np.testing.assert_allclose(batch.returns, [3.0, 2.0, 5.0])

    def test_one_step_limit(self):
        batch = compute_advantages(
            _hand_batch([1.0, 2.0], [False, True], values=[0.5, 1.5]), 1.0, 0.0, normalize=False
        )
        np.testing.assert_allclose(batch.advantages, [1.0 + 1.5 - 0.5, 2.0 - 1.5])

    def test_normalized(self):
        batch = compute_advantages(_hand_batch([1.0, 2.0, 5.0], [False, True, True]), 1.0, 0.95)
        assert batch.normalized
        assert batch.advantages.mean() == pytest.approx(0.0, abs=1e-12)
        assert batch.advantages.std() == pytest.approx(1.0)

    def test_zero_variance_is_left_alone(self):
        batch = compute_advantages(_hand_batch([0.0, 0.0], [True, True]), 1.0, 0.95)
        assert not batch.normalized
        np.testing.assert_array_equal(batch.advantages, [0.0, 0.0])


class TestUpdate:
    def test_update_moves_learner_and_syncs_old_policy(self, env_config):
        trainer = PPOTrainer(SMALL, seed=0)
        before = trainer.policy.actor.get_flat()
        batch = collect_episodes(trainer.old_policy, env_config, 4, np.random.default_rng(0))
        compute_advantages(batch, 1.0, 0.95)
        stats = trainer.ppo_update(batch, np.random.default_rng(1))
        assert not stats.aborted
        assert not np.array_equal(trainer.policy.actor.get_flat(), before)
        np.testing.assert_array_equal(trainer.old_policy.actor.get_flat(), trainer.policy.actor.get_flat())

    def test_non_finite_loss_aborts_and_restores(self, env_config):
        trainer = PPOTrainer(SMALL, seed=0)
        before = trainer.policy.actor.get_flat()
        batch = collect_episodes(trainer.old_policy, env_config, 2, np.random.default_rng(0))
        compute_advantages(batch, 1.0, 0.95)
        batch.advantages[:] = np.nan
        stats = trainer.ppo_update(batch, np.random.default_rng(1))
        assert stats.aborted
        np.testing.assert_array_equal(trainer.policy.actor.get_flat(), before)

    def test_update_requires_advantages(self, env_config):
        trainer = PPOTrainer(SMALL, seed=0)
        batch = collect_episodes(trainer.old_policy, env_config, 1, np.random.default_rng(0))
        with pytest.raises(InvalidParameterError):
            trainer.ppo_update(batch, np.random.default_rng(1))


class TestTraining:
    def test_fixed_seed_is_bit_reproducible(self, env_config):
        first = train(env_config, SMALL, seed=3)
        second = train(env_config, SMALL, seed=3)
        assert [p.model_dump() for p in first.curve] == [p.model_dump() for p in second.curve]
        np.testing.assert_array_equal(first.policy.actor.get_flat(), second.policy.actor.get_flat())
        assert first.best_sequence == second.best_sequence

    def test_budget_exhaustion_is_reported(self, env_config):
        result = train(env_config, SMALL, seed=0)
        assert result.iterations == 3
        assert not result.converged
        assert len(result.best_sequence) == 4
        assert [p.iteration for p in result.curve] == [1, 2, 3]

    def test_observation_size_must_match(self, thermal, params):
        env = EnvConfig(initial=thermal, params=params, n_rounds=4, obs_size=32)
        with pytest.raises(InvalidParameterError):
            train(env, SMALL)


class TestGeneration:
    def test_generated_sequence_replays(self, thermal, params):
        generated = generate_sequence(_policy(), thermal, params, 6)
        assert len(generated.sequence) == 6
        assert generated.intervals == generated.trace.intervals
        replay = run_sequence(thermal, generated.sequence, params)
        assert replay.final.C == generated.trace.final.C

    def test_ground_state_input_is_degenerate(self, params):
        with pytest.raises(DegenerateStateError) as info:
            generate_sequence(_policy(obs_size=8), PopulationState.pure(0, 7), params, 4)
        assert info.value.step == 1


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        policy = _policy()
        path = save_policy(tmp_path / "policy.json", policy, SMALL, metadata={"seed": 0})
        loaded, checkpoint = load_policy(path)
        obs = np.random.default_rng(0).random((5, 16))
        np.testing.assert_array_equal(loaded.probabilities(obs), policy.probabilities(obs))
        np.testing.assert_array_equal(loaded.values(obs), policy.values(obs))
        assert checkpoint.actor_sizes == [16, 8, 2]
        assert checkpoint.parameter_order == ["W1", "b1", "W2", "b2"]
        assert checkpoint.metadata == {"seed": 0}

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_policy(tmp_path / "absent.json")

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(CheckpointError):
            load_policy(path)

    def test_wrong_format(self, tmp_path):
        path = save_policy(tmp_path / "policy.json", _policy(), SMALL)
        document = json.loads(path.read_text(encoding="utf-8"))
        document["format"] = "something-else"
        path.write_text(json.dumps(document), encoding="utf-8")
        with pytest.raises(CheckpointError):
            load_policy(path)

    def test_weight_count_mismatch(self, tmp_path):
        path = save_policy(tmp_path / "policy.json", _policy(), SMALL)
        document = json.loads(path.read_text(encoding="utf-8"))
        document["actor"] = document["actor"][:-1]
        path.write_text(json.dumps(document), encoding="utf-8")
        with pytest.raises(CheckpointError):
            load_policy(path)


@pytest.mark.slow
def test_untrained_policy_reward_lies_between_sequence_bounds(thermal, params):
    env = EnvConfig(initial=thermal, params=params, n_rounds=16, reward_mode="per_step")
    policy = ActorCritic(env.obs_size, (64, 64), np.random.default_rng(0))
    batch = collect_episodes(policy, env, 64, np.random.default_rng(1))
    all_um = run_sequence(thermal, MeasurementSequence.parse("0" * 16), params)
    best_summed = exhaustive_best(thermal, 16, params, metric="summed").best_C
    assert 100.0 * all_um.final.C < batch.episode_totals.mean() < 100.0 * best_summed


def _train_and_generate(config, temperature=None):
    initial = config.initial_state(temperature)
    result = train(config.env_config(initial), config.ppo, seed=config.seed)
    return generate_sequence(result.policy, initial, config.model_params(), config.n_rounds)


@pytest.mark.slow
def test_trained_policy_reaches_the_exhaustive_optimum(thermal, params):
    config = load_config(seed=0)
    generated = _train_and_generate(config)
    best = exhaustive_best(thermal, 16, params)
    last = generated.trace.final
    assert last.C >= 0.95 * best.best_C
    assert math.log10(generated.trace.nbar_th / last.nbar) >= 4.0
    assert last.Pg == pytest.approx(0.30, abs=0.05)


@pytest.mark.slow
def test_trained_sequences_follow_the_temperature_trend():
    config = load_config(seed=0)
    traces = [_train_and_generate(config, t).trace for t in (0.05, 0.1, 0.2, 0.3)]
    final_C = [trace.final.C for trace in traces]
    assert all(a > b for a, b in zip(final_C, final_C[1:]))
    assert traces[-1].sequence.um_fraction > traces[0].sequence.um_fraction
