"""Actor-critic PPO trainer over the cooling environment, and sequence generation from a trained policy."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError
from tqdm import tqdm

from app import __version__
from app.environment import EnvConfig, RewardMode
from app.errors import CheckpointError, InvalidParameterError
from app.measurement import Strategy
from app.network import MLP, Adam, clip_by_global_norm, log_softmax, softmax
from app.physics import ModelParams, PopulationState
from app.sequence import CoolingTrace, MeasurementSequence, run_sequence

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "coolopt-policy"
CHECKPOINT_VERSION = 1

# independent RNG streams derived from the run seed
_STREAM_INIT, _STREAM_COLLECT, _STREAM_SHUFFLE = 0, 1, 2


class PPOConfig(BaseModel):
    """Network shape, PPO hyperparameters, environment reward settings and stopping rule."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    obs_size: int = 64
    hidden_sizes: Tuple[int, ...] = (64, 64)
    clip_ratio: float = 0.2
    discount: float = 1.0
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    update_epochs: int = 4
    episodes_per_batch: int = 64
    minibatch_size: int = 256
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True
    reward_scale: float = 100.0
    annihilation_reward: float = -100.0
    reward_mode: RewardMode = "final"
    max_iterations: int = 600
    min_iterations: int = 100
    plateau_window: int = 10
    patience: int = 20
    plateau_tol: float = 1e-3
    log_every: int = 10


class ActorCritic:
    """Softmax actor over {UM, CM} and a state-value critic, both tanh MLPs on the population vector."""

    def __init__(self, obs_size: int, hidden_sizes: Tuple[int, ...], rng: np.random.Generator):
        self.obs_size = obs_size
        self.actor = MLP((obs_size, *hidden_sizes, 2), rng, output_scale=0.01)
        self.critic = MLP((obs_size, *hidden_sizes, 1), rng, output_scale=1.0)

    def probabilities(self, obs: np.ndarray) -> np.ndarray:
        return softmax(self.actor(np.atleast_2d(obs)))

    def values(self, obs: np.ndarray) -> np.ndarray:
        return self.critic(np.atleast_2d(obs))[:, 0]

    def act(self, obs: np.ndarray, rng: Optional[np.random.Generator], greedy: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """
        Choose actions for a batch of observations.

        Returns:
            (actions, log-probabilities of the chosen actions); greedy ties go to UM
        """
        logp = log_softmax(self.actor(np.atleast_2d(obs)))
        if greedy:
            actions = (logp[:, 1] > logp[:, 0]).astype(np.int64)
        else:
            actions = (rng.random(logp.shape[0]) < np.exp(logp[:, 1])).astype(np.int64)
        return actions, logp[np.arange(actions.size), actions]

    def copy(self) -> "ActorCritic":
        clone = ActorCritic.__new__(ActorCritic)
        clone.obs_size = self.obs_size
        clone.actor = self.actor.copy()
        clone.critic = self.critic.copy()
        return clone


@dataclass
class TrajectoryStep:
    observation: np.ndarray
    action: int
    log_prob: float
    reward: float
    value: float
    done: bool
    C: float


@dataclass
class Batch:
    """Flattened episodes, stored episode after episode."""

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    episode_totals: np.ndarray
    episode_final_C: np.ndarray
    episode_actions: List[List[int]]
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None
    normalized: bool = False

    @classmethod
    def from_trajectories(cls, trajectories: List[List[TrajectoryStep]]) -> "Batch":
        steps = [s for traj in trajectories for s in traj]
        return cls(
            observations=np.stack([s.observation for s in steps]),
            actions=np.array([s.action for s in steps], dtype=np.int64),
            log_probs=np.array([s.log_prob for s in steps]),
            rewards=np.array([s.reward for s in steps]),
            values=np.array([s.value for s in steps]),
            dones=np.array([s.done for s in steps], dtype=bool),
            episode_totals=np.array([sum(s.reward for s in traj) for traj in trajectories]),
            episode_final_C=np.array([traj[-1].C for traj in trajectories]),
            episode_actions=[[s.action for s in traj] for traj in trajectories],
        )

    def __len__(self) -> int:
        return int(self.actions.size)


def collect_episodes(
    policy: ActorCritic,
    env_config: EnvConfig,
    count: int,
    rng: Optional[np.random.Generator],
    greedy: bool = False,
) -> Batch:
    """
    Roll out `count` episodes in lockstep, one actor evaluation per round for the whole batch.

    Args:
        policy: Policy used for sampling (the "old" policy during training)
        env_config: Environment definition
        count: Number of episodes
        rng: Sampling generator; unused when greedy
        greedy: Take argmax actions instead of sampling

    Returns:
        Batch of complete trajectories
    """
    if count < 1:
        raise InvalidParameterError(f"need at least one episode, got {count}")
    envs = [env_config.make() for _ in range(count)]
    obs = np.stack([env.reset() for env in envs])
    trajectories: List[List[TrajectoryStep]] = [[] for _ in range(count)]
    active = np.ones(count, dtype=bool)

    while active.any():
        idx = np.flatnonzero(active)
        actions, log_probs = policy.act(obs[idx], rng, greedy=greedy)
        values = policy.values(obs[idx])
        for j, e in enumerate(idx):
            next_obs, reward, done, info = envs[e].step(int(actions[j]))
            trajectories[e].append(
                TrajectoryStep(
                    observation=obs[e].copy(),
                    action=int(actions[j]),
                    log_prob=float(log_probs[j]),
                    reward=float(reward),
                    value=float(values[j]),
                    done=done,
                    C=float(info["C"]),
                )
            )
            obs[e] = next_obs
            if done:
                active[e] = False
    return Batch.from_trajectories(trajectories)


def compute_advantages(batch: Batch, discount: float, gae_lambda: float, normalize: bool = True) -> Batch:
    """
    Generalized advantage estimates and returns-to-go, in place.

    Episodes end in a terminal step (horizon or annihilation), so bootstrapping stops there.
    Advantages are standardized over the batch unless their variance vanishes.
    """
    n = len(batch)
    advantages = np.zeros(n)
    running = 0.0
    for t in reversed(range(n)):
        if batch.dones[t]:
            next_value, running = 0.0, 0.0
        else:
            next_value = batch.values[t + 1]
        delta = batch.rewards[t] + discount * next_value - batch.values[t]
        running = delta + discount * gae_lambda * running
        advantages[t] = running

    batch.returns = advantages + batch.values
    batch.normalized = False
    if normalize:
        std = advantages.std()
        if std < 1e-12:
            logger.warning("advantages have zero variance; skipping normalization")
        else:
            advantages = (advantages - advantages.mean()) / std
            batch.normalized = True
    batch.advantages = advantages
    return batch


def policy_loss_and_grads(
    actor: MLP,
    obs: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    clip_ratio: float,
    entropy_coef: float,
) -> Tuple[float, List[np.ndarray], Dict[str, float]]:
    """
    Clipped surrogate loss (to minimize) with entropy bonus, and its analytic gradient.

    loss = -mean(min(r A, clip(r, 1-eps, 1+eps) A)) - entropy_coef * mean(H)
    """
    batch = actions.size
    logits, activations = actor.forward(obs)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    rows = np.arange(batch)
    logp = logp_all[rows, actions]

    ratio = np.exp(logp - old_log_probs)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * advantages
    surrogate = np.minimum(unclipped, clipped)
    entropy = -(probs * logp_all).sum(axis=1)
    loss = float(-surrogate.mean() - entropy_coef * entropy.mean())

    # the clipped branch is constant in theta whenever it is the smaller one
    d_surr_d_logp = np.where(unclipped <= clipped, ratio * advantages, 0.0)
    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    d_logits = -(d_surr_d_logp[:, None] * (onehot - probs)) / batch
    d_logits += entropy_coef * probs * (logp_all + entropy[:, None]) / batch

    grads = actor.backward(activations, d_logits)
    stats = {
        "policy_loss": float(-surrogate.mean()),
        "entropy": float(entropy.mean()),
        "approx_kl": float(np.mean(old_log_probs - logp)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip_ratio)),
    }
    return loss, grads, stats


def value_loss_and_grads(critic: MLP, obs: np.ndarray, returns: np.ndarray, value_coef: float) -> Tuple[float, List[np.ndarray]]:
    """value_coef * mean((V(s) - R)^2) and its gradient."""
    values, activations = critic.forward(obs)
    error = values[:, 0] - returns
    loss = float(value_coef * np.mean(error**2))
    d_values = (2.0 * value_coef / error.size) * error[:, None]
    return loss, critic.backward(activations, d_values)


class UpdateStats(BaseModel):
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    clip_fraction: float = 0.0
    aborted: bool = False


class PPOTrainer:
    """Learner policy, the frozen sampling policy, and one Adam optimizer per network."""

    def __init__(self, config: PPOConfig, seed: int):
        self.config = config
        self.seed = seed
        init_rng = np.random.default_rng([seed, _STREAM_INIT])
        self.policy = ActorCritic(config.obs_size, config.hidden_sizes, init_rng)
        self.old_policy = self.policy.copy()
        self.actor_opt = Adam(self.policy.actor.params, lr=config.learning_rate)
        self.critic_opt = Adam(self.policy.critic.params, lr=config.learning_rate)

    def ppo_update(self, batch: Batch, rng: np.random.Generator) -> UpdateStats:
        """
        Several epochs of minibatch gradient steps on the clipped objective, then old <- new.

        A non-finite loss aborts the whole update and restores the parameters held before it.
        """
        cfg = self.config
        if batch.advantages is None or batch.returns is None:
            raise InvalidParameterError("batch has no advantages; run compute_advantages first")

        saved = (
            self.policy.actor.get_flat(),
            self.policy.critic.get_flat(),
            self.actor_opt.snapshot(),
            self.critic_opt.snapshot(),
        )
        totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_fraction": 0.0}
        updates = 0

        for _ in range(cfg.update_epochs):
            order = rng.permutation(len(batch))
            for start in range(0, len(batch), cfg.minibatch_size):
                mb = order[start : start + cfg.minibatch_size]
                p_loss, p_grads, p_stats = policy_loss_and_grads(
                    self.policy.actor,
                    batch.observations[mb],
                    batch.actions[mb],
                    batch.log_probs[mb],
                    batch.advantages[mb],
                    cfg.clip_ratio,
                    cfg.entropy_coef,
                )
                v_loss, v_grads = value_loss_and_grads(self.policy.critic, batch.observations[mb], batch.returns[mb], cfg.value_coef)
                if not (np.isfinite(p_loss) and np.isfinite(v_loss)):
                    logger.warning("non-finite PPO loss (policy %r, value %r); update aborted", p_loss, v_loss)
                    self.policy.actor.set_flat(saved[0])
                    self.policy.critic.set_flat(saved[1])
                    self.actor_opt.restore(saved[2])
                    self.critic_opt.restore(saved[3])
                    return UpdateStats(aborted=True)

                p_grads, _ = clip_by_global_norm(p_grads, cfg.max_grad_norm)
                v_grads, _ = clip_by_global_norm(v_grads, cfg.max_grad_norm)
                self.actor_opt.step(p_grads)
                self.critic_opt.step(v_grads)

                for key, value in p_stats.items():
                    totals[key] += value
                totals["value_loss"] += v_loss
                updates += 1

        self.old_policy.actor.load_from(self.policy.actor)
        self.old_policy.critic.load_from(self.policy.critic)
        return UpdateStats(**{k: v / max(updates, 1) for k, v in totals.items()})


class CurvePoint(BaseModel):
    iteration: int
    mean_total_reward: float
    best_total_reward: float
    best_C: float
    greedy_final_C: float
    mean_final_C: float
    policy_entropy: float


@dataclass
class TrainingResult:
    """Best-so-far policy (by greedy final C) and the learning curve."""

    policy: ActorCritic
    curve: List[CurvePoint]
    converged: bool
    best_C: float
    best_sequence: str
    iterations: int
    metadata: Dict[str, Any] = field(default_factory=dict)


def _greedy_rollout(policy: ActorCritic, env_config: EnvConfig) -> Tuple[float, float, str]:
    episode = collect_episodes(policy, env_config, 1, None, greedy=True)
    actions = "".join(str(a) for a in episode.episode_actions[0])
    return float(episode.episode_final_C[0]), float(episode.episode_totals[0]), actions


def _plateaued(history: List[float], cfg: PPOConfig) -> bool:
    needed = cfg.plateau_window + cfg.patience
    if len(history) < max(needed, cfg.min_iterations):
        return False
    recent = float(np.mean(history[-cfg.plateau_window :]))
    earlier = float(np.mean(history[-needed : -cfg.patience]))
    return abs(recent - earlier) / max(abs(earlier), 1e-12) < cfg.plateau_tol


def train(env_config: EnvConfig, config: PPOConfig, seed: int = 0, show_progress: bool = False) -> TrainingResult:
    """
    Iterate collect -> advantages -> update until the moving-average total reward plateaus.

    Args:
        env_config: Cooling environment (initial state, model, horizon, reward settings)
        config: PPO hyperparameters and stopping rule
        seed: Run seed; training is bit-reproducible for a fixed seed
        show_progress: Display a progress bar over iterations

    Returns:
        TrainingResult; `converged` is False when the iteration budget ran out first
    """
    if env_config.obs_size != config.obs_size:
        raise InvalidParameterError(f"environment observation size {env_config.obs_size} != policy input {config.obs_size}")

    trainer = PPOTrainer(config, seed)
    best_C, best_total, best_sequence = _greedy_rollout(trainer.policy, env_config)
    best_policy = trainer.policy.copy()
    history: List[float] = []
    curve: List[CurvePoint] = []
    converged = False

    iterations = tqdm(range(1, config.max_iterations + 1), desc="ppo", disable=not show_progress)
    for it in iterations:
        collect_rng = np.random.default_rng([seed, _STREAM_COLLECT, it])
        shuffle_rng = np.random.default_rng([seed, _STREAM_SHUFFLE, it])

        batch = collect_episodes(trainer.old_policy, env_config, config.episodes_per_batch, collect_rng)
        compute_advantages(batch, config.discount, config.gae_lambda, normalize=config.normalize_advantages)
        stats = trainer.ppo_update(batch, shuffle_rng)

        greedy_C, greedy_total, greedy_seq = _greedy_rollout(trainer.policy, env_config)
        mean_total = float(batch.episode_totals.mean())
        best_total = max(best_total, mean_total, greedy_total)
        if greedy_C > best_C:
            best_C, best_sequence = greedy_C, greedy_seq
            best_policy = trainer.policy.copy()

        history.append(mean_total)
        curve.append(
            CurvePoint(
                iteration=it,
                mean_total_reward=mean_total,
                best_total_reward=best_total,
                best_C=best_C,
                greedy_final_C=greedy_C,
                mean_final_C=float(batch.episode_final_C.mean()),
                policy_entropy=stats.entropy,
            )
        )
        if it % config.log_every == 0:
            logger.info(
                "iter %d: mean total reward %.3f, greedy C %.4f (%s), best C %.4f",
                it, mean_total, greedy_C, greedy_seq, best_C,
            )
        if _plateaued(history, config):
            converged = True
            logger.info("total reward plateaued after %d iterations", it)
            break

    if not converged:
        logger.warning("training budget of %d iterations exhausted without plateau; returning best-so-far policy", config.max_iterations)

    return TrainingResult(
        policy=best_policy,
        curve=curve,
        converged=converged,
        best_C=best_C,
        best_sequence=best_sequence,
        iterations=len(curve),
        metadata={"seed": seed},
    )


class GeneratedSequence(BaseModel):
    """Greedy rollout of a trained policy: S_opt, its interval list, and the replayed trace."""

    model_config = ConfigDict(frozen=True)

    sequence: MeasurementSequence
    intervals: List[float]
    trace: CoolingTrace


def generate_sequence(
    policy: ActorCritic,
    initial: PopulationState,
    params: ModelParams,
    n_rounds: int,
) -> GeneratedSequence:
    """
    Run the policy greedily from `initial`, then replay the sequence through run_sequence.

    Raises:
        CoolingError: errors surfaced by the replay, e.g. DegenerateStateError for a ground-state
            input or MeasurementAnnihilationError when a chosen CM round kills the state
        RuntimeError: if the replay disagrees with the rollout
    """
    env = EnvConfig(initial=initial, params=params, n_rounds=n_rounds, obs_size=policy.obs_size).make()
    obs = env.reset()
    steps: List[Strategy] = []
    intervals: List[float] = []
    done = False
    while not done:
        actions, _ = policy.act(obs, None, greedy=True)
        obs, _, done, info = env.step(int(actions[0]))
        steps.append(info["strategy"])
        if info["annihilated"] or info["degenerate"]:
            # replaying the partial sequence raises the underlying physics error with its step
            run_sequence(initial, MeasurementSequence(steps=tuple(steps)), params)
            raise RuntimeError(f"policy rollout failed at round {info['step']} but the replay did not")
        intervals.append(info["tau"])

    sequence = MeasurementSequence(steps=tuple(steps))
    trace = run_sequence(initial, sequence, params)
    if trace.intervals != intervals:
        raise RuntimeError("replayed interval schedule differs from the policy rollout")
    return GeneratedSequence(sequence=sequence, intervals=intervals, trace=trace)


class PolicyCheckpoint(BaseModel):
    """Portable policy file: explicit layout header plus flattened weights (exact float repr)."""

    model_config = ConfigDict(extra="forbid")

    format: str = CHECKPOINT_FORMAT
    format_version: int = CHECKPOINT_VERSION
    app_version: str = __version__
    activation: str = "tanh"
    obs_size: int
    actor_sizes: List[int]
    critic_sizes: List[int]
    parameter_order: List[str]
    actor: List[float]
    critic: List[float]
    ppo: PPOConfig
    metadata: Dict[str, Any] = {}


def _parameter_order(n_layers: int) -> List[str]:
    return [f"{kind}{i}" for i in range(1, n_layers + 1) for kind in ("W", "b")]


def save_policy(path: Path, policy: ActorCritic, config: PPOConfig, metadata: Optional[Dict[str, Any]] = None) -> Path:
    checkpoint = PolicyCheckpoint(
        obs_size=policy.obs_size,
        actor_sizes=list(policy.actor.sizes),
        critic_sizes=list(policy.critic.sizes),
        parameter_order=_parameter_order(len(policy.actor.weights)),
        actor=policy.actor.get_flat().tolist(),
        critic=policy.critic.get_flat().tolist(),
        ppo=config,
        metadata=metadata or {},
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint.model_dump(mode="json"), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("saved policy checkpoint %s", path)
    return path


def load_policy(path: Path) -> Tuple[ActorCritic, PolicyCheckpoint]:
    """
    Load a checkpoint written by save_policy.

    Raises:
        CheckpointError: missing file, wrong format/version, or inconsistent layout
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"policy checkpoint not found: {path}")
    try:
        checkpoint = PolicyCheckpoint.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise CheckpointError(f"invalid policy checkpoint {path}: {exc}") from exc
    if checkpoint.format != CHECKPOINT_FORMAT or checkpoint.format_version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint {checkpoint.format} v{checkpoint.format_version}; "
            f"expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}"
        )

    hidden = tuple(checkpoint.actor_sizes[1:-1])
    policy = ActorCritic(checkpoint.obs_size, hidden, np.random.default_rng(0))
    if list(policy.actor.sizes) != checkpoint.actor_sizes or list(policy.critic.sizes) != checkpoint.critic_sizes:
        raise CheckpointError(f"checkpoint layout {checkpoint.actor_sizes}/{checkpoint.critic_sizes} is not an actor/critic pair")
    try:
        policy.actor.set_flat(np.array(checkpoint.actor))
        policy.critic.set_flat(np.array(checkpoint.critic))
    except ValueError as exc:
        raise CheckpointError(f"checkpoint {path} weight count does not match its layout: {exc}") from exc
    return policy, checkpoint
