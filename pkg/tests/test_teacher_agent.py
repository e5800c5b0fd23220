"""Tests for teacher_agent module."""
import numpy as np
import pytest


class ResourceTrackingEnv:
    """Utilization u in [0, 1]; each action moves it by 0.2 * a, reward 1 - (u - 0.6)^2."""

    state_dim = 1
    action_dim = 1
    target = 0.6

    def __init__(self, steps=20, seed=0):
        self.steps = steps
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.u = 0.0

    def reset(self):
        self.t = 0
        self.u = float(self.rng.uniform(0.0, 1.0))
        return np.array([self.u])

    def step(self, action):
        self.u = float(np.clip(self.u + 0.2 * np.clip(action[0], -1.0, 1.0), 0.0, 1.0))
        reward = 1.0 - (self.u - self.target) ** 2
        self.t += 1
        return np.array([self.u]), reward, self.t >= self.steps, {"failure_rate": 0.0}


def _small_config(**overrides):
    from teacher_agent import TD3Config

    fields = dict(hidden=(32, 32), batch_size=32, warmup_steps=50, seed=0)
    fields.update(overrides)
    return TD3Config(**fields)


def test_config_validation():
    from teacher_agent import TD3Config, TeacherError

    with pytest.raises(TeacherError):
        TD3Config(gamma=0.0)
    with pytest.raises(TeacherError):
        TD3Config(a_low=1.0, a_high=-1.0)
    with pytest.raises(TeacherError):
        TD3Config(policy_update=0)


def test_agent_networks_and_counts():
    from teacher_agent import TD3Agent

    agent = TD3Agent(15, 9)
    counts = agent.parameter_counts()
    assert counts["teacher_actor"] == 15 * 64 + 64 + 64 * 64 + 64 + 64 * 9 + 9
    assert counts["teacher_critic1"] == counts["teacher_critic2"] == 24 * 64 + 64 + 64 * 64 + 64 + 65
    for online, target in ((agent.actor, agent.actor_target), (agent.critic1, agent.critic1_target)):
        for p, t in zip(online.parameters(), target.parameters()):
            np.testing.assert_array_equal(p, t)
            assert p is not t
    assert not np.array_equal(agent.critic1.parameters()[0], agent.critic2.parameters()[0])


def test_replay_buffer_ring_and_sample():
    from teacher_agent import EmptyBatchError, ReplayBuffer

    buffer = ReplayBuffer(2, 1, capacity=3)
    rng = np.random.default_rng(0)
    with pytest.raises(EmptyBatchError):
        buffer.sample(2, rng)
    for i in range(5):
        buffer.add([i, i], [0.1 * i], float(i), [i + 1, i + 1], i == 4)
    assert len(buffer) == 3
    np.testing.assert_allclose(buffer.transitions().rewards, [2.0, 3.0, 4.0])
    batch = buffer.sample(10, rng)
    assert len(batch) == 3
    assert len(set(batch.rewards)) == 3


def test_select_action_respects_bounds():
    from teacher_agent import TD3Agent, select_action

    agent = TD3Agent(3, 2, _small_config())
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = select_action(agent, np.ones(3), sigma=5.0, rng=rng)
        assert a.shape == (2,)
        assert np.all((a >= -1.0) & (a <= 1.0))
    narrow = select_action(agent, np.ones(3), 5.0, rng, bounds=(-0.1, 0.1))
    assert np.all(np.abs(narrow) <= 0.1)
    np.testing.assert_allclose(select_action(agent, np.ones(3), 0.0), agent.act(np.ones(3)))


def test_select_action_rejects_wrong_state():
    from neural import ShapeMismatchError
    from teacher_agent import TD3Agent, select_action

    with pytest.raises(ShapeMismatchError):
        select_action(TD3Agent(3, 2, _small_config()), np.ones(4), 0.0)


def test_smoothed_target_noise_is_clipped():
    from neural import forward
    from teacher_agent import TD3Agent, smoothed_target_action

    agent = TD3Agent(2, 2, _small_config())
    states = np.random.default_rng(1).normal(size=(50, 2))
    clean, _ = forward(agent.actor_target, states)
    noisy = smoothed_target_action(agent, states, 10.0, 0.1, np.random.default_rng(2))
    assert np.all(np.abs(noisy - clean) <= 0.1 + 1e-12)


def test_td_target_uses_minimum_and_done_mask():
    from teacher_agent import td_target

    y = td_target(
        rewards=[1.0, 1.0], next_states=np.zeros((2, 1)), next_actions=np.zeros((2, 1)),
        dones=[0.0, 1.0], gamma=0.5,
        target_critics=(lambda sa: np.full((len(sa), 1), 4.0), lambda sa: np.full((len(sa), 1), 2.0)),
    )
    np.testing.assert_allclose(y, [2.0, 1.0])


def test_delayed_actor_and_target_updates():
    from teacher_agent import ReplayBuffer, TD3Agent, td3_update

    agent = TD3Agent(2, 1, _small_config())
    buffer = ReplayBuffer(2, 1, 100)
    rng = np.random.default_rng(0)
    for _ in range(40):
        buffer.add(rng.normal(size=2), rng.uniform(-1, 1, 1), rng.normal(), rng.normal(size=2), False)
    actor_before = [p.copy() for p in agent.actor.parameters()]
    target_before = [p.copy() for p in agent.critic1_target.parameters()]

    first = td3_update(agent, buffer.sample(32, rng), rng)
    assert first.actor_loss is None
    assert agent.update_count == 1
    for p, q in zip(agent.actor.parameters(), actor_before):
        np.testing.assert_array_equal(p, q)
    for p, q in zip(agent.critic1_target.parameters(), target_before):
        np.testing.assert_array_equal(p, q)

    second = td3_update(agent, buffer.sample(32, rng), rng)
    assert second.actor_loss is not None
    assert not all(np.array_equal(p, q) for p, q in zip(agent.actor.parameters(), actor_before))
    assert not all(
        np.array_equal(p, q) for p, q in zip(agent.critic1_target.parameters(), target_before)
    )


def test_critic_update_fits_immediate_rewards():
    from teacher_agent import Batch, TD3Agent, critic_update

    agent = TD3Agent(1, 1, _small_config(critic_lr=1e-2))
    rng = np.random.default_rng(0)
    states = rng.uniform(-1, 1, size=(64, 1))
    actions = rng.uniform(-1, 1, size=(64, 1))
    batch = Batch(states, actions, (states + actions)[:, 0], states, np.ones(64))
    first = critic_update(agent, batch, rng)
    for _ in range(300):
        last = critic_update(agent, batch, rng)
    assert last[0] < 0.1 * first[0]
    assert last[1] < 0.1 * first[1]


def test_actor_climbs_fitted_quadratic_critic():
    from teacher_agent import Batch, TD3Agent, actor_update, critic_update

    agent = TD3Agent(1, 1, _small_config(critic_lr=1e-2, actor_lr=1e-2))
    rng = np.random.default_rng(3)
    for _ in range(1500):
        states = rng.uniform(-1, 1, size=(64, 1))
        actions = rng.uniform(-1, 1, size=(64, 1))
        rewards = -((actions[:, 0] - 0.5) ** 2)
        critic_update(agent, Batch(states, actions, rewards, states, np.zeros(64)), rng, gamma=0.0)

    states = np.linspace(-1, 1, 64)[:, None]
    batch = Batch(states, np.zeros((64, 1)), np.zeros(64), states, np.zeros(64))
    for _ in range(500):
        actor_update(agent, batch)
    chosen = agent.act(states)[:, 0]
    assert np.mean(np.abs(chosen - 0.5)) < 0.2


def test_empty_batch_raises():
    from teacher_agent import Batch, EmptyBatchError, TD3Agent, actor_update, critic_update

    agent = TD3Agent(1, 1, _small_config())
    empty = Batch(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0), np.zeros((0, 1)), np.zeros(0))
    with pytest.raises(EmptyBatchError):
        critic_update(agent, empty)
    with pytest.raises(EmptyBatchError):
        actor_update(agent, empty)


def test_train_td3_runs_and_keeps_buffer(capsys):
    from teacher_agent import train_td3

    env = ResourceTrackingEnv(steps=10)
    agent, curve = train_td3(env, _small_config(episodes=8), log_every=4)
    assert len(curve) == 8
    assert [c.episode for c in curve] == list(range(8))
    assert len(agent.buffer) == 80
    assert agent.update_count == 80 - 50 + 1
    assert "[TD3] episode 8/8" in capsys.readouterr().out

    # continuing reuses the agent's buffer
    agent, _ = train_td3(env, _small_config(episodes=1), agent=agent, log_every=0)
    assert len(agent.buffer) == 90


@pytest.mark.slow
def test_train_td3_learns_resource_tracking():
    from teacher_agent import train_td3

    agent, curve = train_td3(ResourceTrackingEnv(steps=20), _small_config(episodes=200), log_every=0)
    assert len(curve) == 200
    assert max(c.mean_reward for c in curve) >= 0.9
