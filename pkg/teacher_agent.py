import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from config import (
    DEFAULT_SEED, TD3_GAMMA, TD3_POLYAK, TD3_POLICY_UPDATE, TD3_EXPLORATION_NOISE,
    TD3_TARGET_NOISE, TD3_NOISE_CLIP, TD3_BATCH_SIZE, TD3_BUFFER_CAPACITY, TD3_WARMUP_STEPS,
    TD3_ACTOR_LR, TD3_CRITIC_LR, TD3_HIDDEN,
)
from neural import AdamState, DenseNet, ShapeMismatchError, backward, forward, soft_update

logger = logging.getLogger(__name__)


class TeacherError(Exception):
    """Error raised by the TD3 teacher."""

    def __init__(self, message: str, original_error: Optional[Exception] = None):
        super().__init__(message)
        self.original_error = original_error


class EmptyBatchError(TeacherError):
    pass


@dataclass
class TD3Config:
    gamma: float = TD3_GAMMA
    polyak: float = TD3_POLYAK
    policy_update: int = TD3_POLICY_UPDATE
    exploration_noise: float = TD3_EXPLORATION_NOISE
    target_noise: float = TD3_TARGET_NOISE
    noise_clip: float = TD3_NOISE_CLIP
    a_low: float = -1.0
    a_high: float = 1.0
    batch_size: int = TD3_BATCH_SIZE
    buffer_capacity: int = TD3_BUFFER_CAPACITY
    warmup_steps: int = TD3_WARMUP_STEPS
    actor_lr: float = TD3_ACTOR_LR
    critic_lr: float = TD3_CRITIC_LR
    hidden: tuple = TD3_HIDDEN
    episodes: int = 0
    steps_per_episode: Optional[int] = None  # None: run until the env reports done
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise TeacherError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.polyak < 1.0:
            raise TeacherError(f"polyak must lie in [0, 1), got {self.polyak}")
        if not self.noise_clip > 0:
            raise TeacherError(f"noise_clip must be positive, got {self.noise_clip}")
        if not self.a_low < self.a_high:
            raise TeacherError(f"Action bounds reversed: [{self.a_low}, {self.a_high}]")
        if self.policy_update < 1:
            raise TeacherError(f"policy_update must be at least 1, got {self.policy_update}")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise TeacherError("batch_size and buffer_capacity must be positive")

    @property
    def bounds(self) -> tuple[float, float]:
        return self.a_low, self.a_high


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity ring of (s, a, r, s', d) transitions."""

    def __init__(self, state_dim: int, action_dim: int, capacity: int = TD3_BUFFER_CAPACITY):
        if capacity < 1:
            raise TeacherError(f"Replay capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state, action, reward: float, next_state, done: bool):
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _gather(self, idx: np.ndarray) -> Batch:
        return Batch(
            states=self.states[idx], actions=self.actions[idx], rewards=self.rewards[idx],
            next_states=self.next_states[idx], dones=self.dones[idx],
        )

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform sample, without replacement inside the batch."""
        if self.size == 0:
            raise EmptyBatchError("Cannot sample from an empty replay buffer")
        idx = rng.choice(self.size, size=min(batch_size, self.size), replace=False)
        return self._gather(idx)

    def transitions(self) -> Batch:
        """All stored transitions, oldest first."""
        if self.size < self.capacity:
            return self._gather(np.arange(self.size))
        return self._gather(np.roll(np.arange(self.capacity), -self.cursor))


class TD3Agent:
    def __init__(self, state_dim: int, action_dim: int, config: TD3Config = None):
        self.config = config or TD3Config()
        self.state_dim = state_dim
        self.action_dim = action_dim
        hidden = list(self.config.hidden)
        actor_seed, critic1_seed, critic2_seed = np.random.SeedSequence(self.config.seed).spawn(3)

        self.actor = DenseNet.build(
            [state_dim] + hidden + [action_dim],
            ["relu"] * len(hidden) + ["tanh"],
            rng=np.random.default_rng(actor_seed),
        )
        critic_sizes = [state_dim + action_dim] + hidden + [1]
        critic_acts = ["relu"] * len(hidden) + ["identity"]
        self.critic1 = DenseNet.build(critic_sizes, critic_acts, rng=np.random.default_rng(critic1_seed))
        self.critic2 = DenseNet.build(critic_sizes, critic_acts, rng=np.random.default_rng(critic2_seed))

        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()

        self.actor_optimizer = AdamState.for_params(self.actor.parameters())
        self.critic1_optimizer = AdamState.for_params(self.critic1.parameters())
        self.critic2_optimizer = AdamState.for_params(self.critic2.parameters())
        self.update_count = 0
        self.buffer: Optional["ReplayBuffer"] = None

    def act(self, state) -> np.ndarray:
        """Deterministic policy output, clipped to the action bounds."""
        out, _ = forward(self.actor, state)
        return np.clip(out, *self.config.bounds)

    def parameter_counts(self) -> dict[str, int]:
        return {
            "teacher_actor": self.actor.parameter_count(),
            "teacher_critic1": self.critic1.parameter_count(),
            "teacher_critic2": self.critic2.parameter_count(),
        }


@dataclass
class UpdateStats:
    critic1_loss: float
    critic2_loss: float
    actor_loss: Optional[float] = None


@dataclass
class EpisodeStats:
    episode: int
    mean_reward: float
    mean_rt_ms: float = 0.0
    failure_rate: float = 0.0


def _check_state(agent: TD3Agent, state: np.ndarray):
    if state.shape[-1] != agent.state_dim:
        raise ShapeMismatchError(
            f"State has {state.shape[-1]} features, actor expects {agent.state_dim}"
        )


def select_action(
    agent: TD3Agent,
    state,
    sigma: float,
    rng: Optional[np.random.Generator] = None,
    bounds: Optional[tuple[float, float]] = None,
) -> np.ndarray:
    """clip(pi(s) + eps, a_low, a_high) with eps ~ N(0, sigma^2) per coordinate."""
    s = np.asarray(state, dtype=np.float64)
    _check_state(agent, s)
    low, high = bounds or agent.config.bounds
    out, _ = forward(agent.actor, s)
    if sigma > 0:
        out = out + rng.normal(0.0, sigma, size=out.shape)
    return np.clip(out, low, high)


def smoothed_target_action(
    agent: TD3Agent,
    next_states,
    sigma: float,
    noise_clip: float,
    rng: Optional[np.random.Generator] = None,
    bounds: Optional[tuple[float, float]] = None,
) -> np.ndarray:
    """clip(pi'(s') + clip(eps, -c, c), a_low, a_high)."""
    s = np.asarray(next_states, dtype=np.float64)
    low, high = bounds or agent.config.bounds
    out, _ = forward(agent.actor_target, s)
    if sigma > 0:
        noise = np.clip(rng.normal(0.0, sigma, size=out.shape), -noise_clip, noise_clip)
        out = out + noise
    return np.clip(out, low, high)


def td_target(rewards, next_states, next_actions, dones, gamma: float, target_critics) -> np.ndarray:
    """y = r + gamma * (1 - d) * min(Q1'(s', a'), Q2'(s', a'))."""
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    d = np.asarray(dones, dtype=np.float64).reshape(-1)
    sa = np.concatenate(
        [np.atleast_2d(next_states), np.atleast_2d(next_actions)], axis=-1
    )
    q1, q2 = (np.asarray(critic(sa), dtype=np.float64).reshape(-1) for critic in target_critics)
    return r + gamma * (1.0 - d) * np.minimum(q1, q2)


def critic_update(
    agent: TD3Agent,
    batch: Batch,
    rng: Optional[np.random.Generator] = None,
    gamma: Optional[float] = None,
) -> tuple[float, float]:
    """One step on each critic toward the shared target; returns pre-step losses."""
    if batch is None or len(batch) == 0:
        raise EmptyBatchError("critic_update needs a non-empty batch")
    cfg = agent.config
    gamma = cfg.gamma if gamma is None else gamma
    next_actions = smoothed_target_action(
        agent, batch.next_states, cfg.target_noise, cfg.noise_clip, rng
    )
    y = td_target(
        batch.rewards, batch.next_states, next_actions, batch.dones, gamma,
        (agent.critic1_target, agent.critic2_target),
    )
    sa = np.concatenate([batch.states, batch.actions], axis=1)
    losses = []
    for critic, optimizer in (
        (agent.critic1, agent.critic1_optimizer),
        (agent.critic2, agent.critic2_optimizer),
    ):
        q, cache = forward(critic, sa)
        diff = q[:, 0] - y
        loss = float(np.mean(diff ** 2))
        losses.append(loss)
        if loss > 0.0:
            grads = backward(critic, cache, (2.0 * diff / len(diff))[:, None])
            critic.apply_gradients(grads, optimizer, cfg.critic_lr)
    return losses[0], losses[1]


def actor_update(agent: TD3Agent, batch: Batch) -> float:
    """One step on the actor minimizing -mean Q1(s, pi(s)); the critic stays fixed."""
    if batch is None or len(batch) == 0:
        raise EmptyBatchError("actor_update needs a non-empty batch")
    actions, actor_cache = forward(agent.actor, batch.states)
    q, critic_cache = forward(agent.critic1, np.concatenate([batch.states, actions], axis=1))
    loss = -float(np.mean(q))
    n = len(batch)
    critic_grads = backward(agent.critic1, critic_cache, np.full((n, 1), -1.0 / n))
    grad_actions = critic_grads.input[:, agent.state_dim:]
    actor_grads = backward(agent.actor, actor_cache, grad_actions)
    agent.actor.apply_gradients(actor_grads, agent.actor_optimizer, agent.config.actor_lr)
    return loss


def td3_update(agent: TD3Agent, batch: Batch, rng: np.random.Generator) -> UpdateStats:
    """Critic step every call; actor and target steps every policy_update-th call."""
    agent.update_count += 1
    loss1, loss2 = critic_update(agent, batch, rng)
    stats = UpdateStats(loss1, loss2)
    if agent.update_count % agent.config.policy_update == 0:
        stats.actor_loss = actor_update(agent, batch)
        rho = agent.config.polyak
        soft_update(agent.actor_target, agent.actor, rho)
        soft_update(agent.critic1_target, agent.critic1, rho)
        soft_update(agent.critic2_target, agent.critic2, rho)
    return stats


def train_td3(
    env,
    config: TD3Config = None,
    agent: Optional[TD3Agent] = None,
    buffer: Optional[ReplayBuffer] = None,
    log_every: int = 10,
) -> tuple[TD3Agent, list[EpisodeStats]]:
    """
    Run config.episodes episodes of TD3 on env.

    Warmup steps take uniform-random actions; after warmup every env step
    performs one update. An existing agent and buffer can be passed in to
    continue training.
    """
    config = config or TD3Config()
    agent = agent or TD3Agent(env.state_dim, env.action_dim, config)
    if buffer is None:
        buffer = agent.buffer
    if buffer is None:
        buffer = ReplayBuffer(env.state_dim, env.action_dim, config.buffer_capacity)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    low, high = config.bounds
    curve = []
    total_steps = len(buffer)

    for episode in range(config.episodes):
        state = env.reset()
        rewards, rts, failure_rates = [], [], []
        t = 0
        while True:
            if total_steps < config.warmup_steps:
                action = rng.uniform(low, high, size=env.action_dim)
            else:
                action = select_action(agent, state, config.exploration_noise, rng)
            next_state, reward, done, info = env.step(action)
            buffer.add(state, action, reward, next_state, done)
            state = next_state
            total_steps += 1
            t += 1
            rewards.append(reward)
            rts.append(info.get("mean_rt_ms", 0.0))
            failure_rates.append(info.get("failure_rate", 0.0))

            if total_steps >= config.warmup_steps and len(buffer) >= config.batch_size:
                td3_update(agent, buffer.sample(config.batch_size, rng), rng)

            if done or (config.steps_per_episode and t >= config.steps_per_episode):
                break

        stats = EpisodeStats(
            episode=episode,
            mean_reward=float(np.mean(rewards)),
            mean_rt_ms=float(np.mean(rts)),
            failure_rate=float(np.mean(failure_rates)),
        )
        curve.append(stats)
        if log_every and (episode + 1) % log_every == 0:
            print(f"[TD3] episode {episode + 1}/{config.episodes}: "
                  f"mean reward {stats.mean_reward:.3f}, failure rate {stats.failure_rate:.3f}")

    agent.buffer = buffer
    return agent, curve
