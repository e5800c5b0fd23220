import logging
import os
import signal
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ValidationError, field_validator, model_validator

from cluster_model import (
    ClusterError, ClusterState, build_observation, load_scenario, load_scenario_spec,
    local_features, machine_context, observation_block,
)
from config import (
    CONTROL_INTERVAL, DEFAULT_SCENARIO_FILE, DEFAULT_SEED, MIN_TEACHER_INTERVALS,
    NOTIFIER_HISTORY, NOTIFIER_THRESHOLD, STUDENT_BATCH_SIZE, STUDENT_LR,
    STUDENT_STEPS_PER_INTERVAL, SIM_HORIZON,
)
from metrics import MetricsSummary, compute_metrics
from reward import RewardConfig
from retraining_notifier import NotifierConfig, RetrainingNotifier
from simulator import (
    ClusterEnv, RateSchedule, SimConfig, SimLog, actions_from_vector, expected_loads,
    step, vector_from_actions,
)
from student_agent import (
    DeploymentBuffer, ScalingSteps, StudentNet, imitation_step, record_guidance, student_act,
)
from teacher_agent import ReplayBuffer, TD3Agent, TD3Config, select_action, td3_update, train_td3
from threshold_scaler import threshold_autoscaler
from workload import (
    LoadGenerator, default_profile_rates, fit_profiler, parse_trace, profile_simulator,
    synthetic_schedule,
)

logger = logging.getLogger(__name__)

MODES = ("drpc", "teacher-only", "threshold-baseline")


class OrchestratorError(Exception):
    def __init__(self, message: str, original_error: Optional[Exception] = None):
        super().__init__(message)
        self.original_error = original_error


class RunConfig(BaseModel):
    mode: str = "drpc"
    scenario_file: str = DEFAULT_SCENARIO_FILE
    trace_file: Optional[str] = None
    episodes: int = 0  # teacher pre-training episodes before the run
    ticks: int = 2000
    seed: int = DEFAULT_SEED
    control_interval: int = CONTROL_INTERVAL
    learn: bool = True  # teacher keeps updating while in control
    notifier_threshold: float = NOTIFIER_THRESHOLD
    notifier_history: int = NOTIFIER_HISTORY
    min_teacher_intervals: int = MIN_TEACHER_INTERVALS

    @field_validator("mode")
    @classmethod
    def _known_mode(cls, value: str) -> str:
        if value not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{value}'")
        return value

    @field_validator("ticks", "control_interval", "notifier_history")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"must be at least 1, got {value}")
        return value

    @model_validator(mode="after")
    def _files_exist(self):
        for name in ("scenario_file", "trace_file"):
            path = getattr(self, name)
            if path is not None and not os.path.isfile(path):
                raise ValueError(f"{name} does not exist: {path}")
        return self


def make_run_config(**fields) -> RunConfig:
    """RunConfig with pydantic errors turned into OrchestratorError."""
    try:
        return RunConfig(**fields)
    except ValidationError as e:
        raise OrchestratorError(f"Invalid run configuration: {e}", original_error=e) from e


@dataclass
class StageSwitch:
    tick: int
    controller: str


class Orchestrator:
    """
    Runs one scenario under one control mode for a fixed number of ticks.

    In drpc mode the teacher acts every control interval and its decisions
    train the students; once released, students act every tick until the
    notifier hands control back.
    """

    def __init__(
        self,
        state: ClusterState,
        schedule: RateSchedule,
        config: RunConfig,
        teacher: Optional[TD3Agent] = None,
        students: Optional[dict[str, StudentNet]] = None,
        notifier: Optional[RetrainingNotifier] = None,
        sim_config: Optional[SimConfig] = None,
        reward_config: Optional[RewardConfig] = None,
        scaling: ScalingSteps = ScalingSteps(),
    ):
        self.config = config
        self.mode = config.mode
        self.initial_state = state
        self.schedule = schedule
        self.sim_config = sim_config or SimConfig(seed=config.seed)
        self.reward_config = reward_config or RewardConfig(rt_max=self.sim_config.rt_max)
        self.scaling = scaling
        self.deployment_ids = state.deployment_ids()

        sim_seed, teacher_seed, student_seed = np.random.SeedSequence(config.seed).spawn(3)
        self.sim_rng = np.random.default_rng(sim_seed)
        self.teacher_rng = np.random.default_rng(teacher_seed)
        self.student_rng = np.random.default_rng(student_seed)

        state_dim = 5 * len(self.deployment_ids)
        action_dim = 3 * len(self.deployment_ids)
        self.teacher = teacher or TD3Agent(state_dim, action_dim, TD3Config(seed=config.seed))
        if self.teacher.state_dim != state_dim or self.teacher.action_dim != action_dim:
            raise OrchestratorError(
                f"Teacher maps {self.teacher.state_dim} -> {self.teacher.action_dim}, scenario "
                f"needs {state_dim} -> {action_dim}"
            )
        if self.teacher.buffer is None:
            self.teacher.buffer = ReplayBuffer(
                state_dim, action_dim, self.teacher.config.buffer_capacity
            )

        supplied = bool(students)
        self.students = dict(students or {})
        for i, dep_id in enumerate(self.deployment_ids):
            if dep_id not in self.students:
                self.students[dep_id] = StudentNet.create(dep_id, seed=config.seed + i)
        self.buffers = {dep_id: DeploymentBuffer() for dep_id in self.deployment_ids}

        self.notifier = notifier or RetrainingNotifier(
            NotifierConfig(config.notifier_threshold, config.notifier_history)
        )
        # Fresh runs start with the teacher in control; supplied students start in charge.
        self.training_mode = self.mode == "teacher-only" or not supplied
        self.intervals_in_stage = 0
        self.switches: list[StageSwitch] = []
        self.log = SimLog(tick_seconds=self.sim_config.tick)
        self.running = True
        self.final_state = state

    def _handle_interrupt(self, signum, frame):
        print("\n[INTERRUPT] Graceful shutdown initiated...")
        self.running = False

    @property
    def controller(self) -> str:
        if self.mode == "threshold-baseline":
            return "baseline"
        return "teacher" if self.training_mode else "students"

    def parameter_counts(self) -> dict[str, int]:
        if self.mode == "threshold-baseline":
            return {}
        counts = self.teacher.parameter_counts()
        if self.mode == "drpc":
            for dep_id in self.deployment_ids:
                counts[f"student_{dep_id}"] = self.students[dep_id].parameter_count()
        return counts

    def _local_state(self, state: ClusterState, observation: np.ndarray, position: int) -> np.ndarray:
        context = machine_context(
            state, self.reward_config.u_pred_cpu, self.reward_config.u_pred_mem
        )
        return local_features(observation_block(observation, position), context)

    def _teacher_decision(self, state: ClusterState, observation: np.ndarray) -> np.ndarray:
        sigma = self.teacher.config.exploration_noise if self.config.learn else 0.0
        vector = select_action(self.teacher, observation, sigma, self.teacher_rng)
        if self.mode == "drpc":
            for i, dep_id in enumerate(self.deployment_ids):
                local = self._local_state(state, observation, i)
                record_guidance(self.buffers[dep_id], local, vector[3 * i:3 * i + 3])
                for _ in range(STUDENT_STEPS_PER_INTERVAL):
                    imitation_step(
                        self.students[dep_id], self.buffers[dep_id], STUDENT_BATCH_SIZE,
                        STUDENT_LR, self.student_rng,
                    )
        return vector

    def _student_actions(self, state: ClusterState, observation: np.ndarray) -> dict:
        return {
            dep_id: student_act(self.students[dep_id], self._local_state(state, observation, i))
            for i, dep_id in enumerate(self.deployment_ids)
        }

    def _decide(self, t: int, state: ClusterState, observation: np.ndarray):
        """Actions for tick t and the action vector recorded for the interval, if any."""
        interval_start = t % self.config.control_interval == 0
        if self.mode == "threshold-baseline":
            actions = threshold_autoscaler(state) if interval_start else {}
            return actions, None
        if self.training_mode:
            if not interval_start:
                return {}, None
            vector = self._teacher_decision(state, observation)
            return actions_from_vector(state, vector), vector
        actions = self._student_actions(state, observation)
        vector = vector_from_actions(state, actions) if interval_start else None
        return actions, vector

    def _switch(self, tick: int, training_mode: bool):
        self.training_mode = training_mode
        self.intervals_in_stage = 0
        self.notifier.reset()
        self.switches.append(StageSwitch(tick, self.controller))
        print(f"[DRPC] tick {tick}: control passes to {self.controller}")

    def _end_interval(self, t: int, interval_reward: float, transition, done: bool):
        if self.mode == "threshold-baseline":
            return
        start_obs, vector, end_obs = transition
        if vector is not None:
            self.teacher.buffer.add(start_obs, vector, interval_reward, end_obs, done)

        if self.training_mode:
            buffer = self.teacher.buffer
            if self.config.learn and len(buffer) >= self.teacher.config.batch_size:
                td3_update(
                    self.teacher, buffer.sample(self.teacher.config.batch_size, self.teacher_rng),
                    self.teacher_rng,
                )
            if self.mode == "teacher-only":
                return
            self.intervals_in_stage += 1
            triggered = self.notifier.observe(interval_reward)
            window_full = self.notifier.iteration >= self.notifier.config.history
            if (not triggered and window_full
                    and self.intervals_in_stage >= self.config.min_teacher_intervals):
                self._switch(t + 1, training_mode=False)
        else:
            self.intervals_in_stage += 1
            if self.notifier.observe(interval_reward):
                print(f"[NOTIFIER] tick {t + 1}: mean reward "
                      f"{self.notifier.mean_reward():.3f} below {self.notifier.config.threshold}")
                self._switch(t + 1, training_mode=True)

    def run(self) -> SimLog:
        print(f"[DRPC] Starting {self.mode} run ({self.config.ticks} ticks, seed {self.config.seed})")
        previous_handler = signal.signal(signal.SIGINT, self._handle_interrupt)
        try:
            self._run_loop()
        finally:
            signal.signal(signal.SIGINT, previous_handler)
        print(f"[DRPC] Finished after {len(self.log)} ticks, {len(self.switches)} stage switch(es)")
        return self.log

    def _run_loop(self):
        state = self.initial_state
        rate, forecast, weights = self.schedule.at(0)
        observation = build_observation(
            state, expected_loads(state, rate, weights), forecast, self.sim_config.max_replicas
        )
        ticks = self.config.ticks
        interval_rewards = []
        start_obs, interval_vector = observation, None

        for t in range(ticks):
            if not self.running:
                break
            controller = self.controller
            actions, vector = self._decide(t, state, observation)
            if vector is not None:
                start_obs, interval_vector = observation, vector

            rate, forecast, weights = self.schedule.at(t)
            result = step(
                state, actions, rate, self.sim_config, self.sim_rng, tick_index=t,
                forecast=forecast, chain_weights=weights, reward_config=self.reward_config,
                steps=self.scaling,
            )
            result.record.controller = controller
            self.log.append(result.record)
            interval_rewards.append(result.reward)
            state = result.state
            observation = result.observation

            last_tick = t + 1 >= ticks
            if (t + 1) % self.config.control_interval == 0 or last_tick:
                self._end_interval(
                    t, float(np.mean(interval_rewards)),
                    (start_obs, interval_vector, observation), last_tick,
                )
                interval_rewards = []
                interval_vector = None

        self.final_state = state


@dataclass
class RunResult:
    log: SimLog
    summary: MetricsSummary
    orchestrator: Orchestrator
    curve: list


def sim_config_for(spec_sim: dict, seed: int) -> SimConfig:
    try:
        return SimConfig(**{**spec_sim, "seed": seed})
    except TypeError as e:
        raise OrchestratorError(f"Unknown simulator setting in scenario: {e}", original_error=e) from e


def build_schedule(state: ClusterState, config: RunConfig, sim_config: SimConfig,
                   user_types=None, predictor=None) -> RateSchedule:
    """Trace-driven schedule when a trace is configured, synthetic diurnal load otherwise."""
    if config.trace_file is None:
        schedule = synthetic_schedule(state, config.ticks, seed=config.seed)
        if user_types:
            generator = LoadGenerator(
                profiler=None, control_interval=1, user_types=user_types,
                chain_ids=[c.id for c in state.chains],
            )
            schedule.chain_weights = generator.chain_weight_schedule(config.ticks)
        return schedule

    trace = parse_trace(config.trace_file)
    samples = profile_simulator(state, default_profile_rates(state), sim_config, seed=config.seed)
    profiler = fit_profiler(samples, seed=config.seed)
    generator = LoadGenerator(
        profiler, predictor=predictor, control_interval=config.control_interval,
        user_types=user_types, chain_ids=[c.id for c in state.chains],
    )
    return generator.schedule(trace)


def run_system(
    config: RunConfig,
    teacher: Optional[TD3Agent] = None,
    students: Optional[dict[str, StudentNet]] = None,
    schedule: Optional[RateSchedule] = None,
    notifier: Optional[RetrainingNotifier] = None,
    predictor=None,
) -> RunResult:
    """Load the scenario, optionally pre-train the teacher, run the loop, summarize."""
    try:
        spec = load_scenario_spec(config.scenario_file)
        state = load_scenario(config.scenario_file)
    except ClusterError as e:
        raise OrchestratorError(f"Invalid scenario: {e}", original_error=e) from e
    sim_config = sim_config_for(spec.sim, config.seed)
    reward_config = RewardConfig(rt_max=sim_config.rt_max)

    if schedule is None:
        schedule = build_schedule(state, config, sim_config, spec.user_types, predictor)

    curve = []
    if config.mode != "threshold-baseline" and config.episodes > 0 and teacher is None:
        env = ClusterEnv(
            state, schedule, sim_config, reward_config,
            steps_per_episode=max(1, min(SIM_HORIZON, config.ticks) // config.control_interval),
            ticks_per_step=config.control_interval,
        )
        td3_config = TD3Config(episodes=config.episodes, seed=config.seed)
        print(f"[TD3] Pre-training teacher for {config.episodes} episode(s)")
        teacher, curve = train_td3(env, td3_config)

    orchestrator = Orchestrator(
        state, schedule, config, teacher=teacher, students=students, notifier=notifier,
        sim_config=sim_config, reward_config=reward_config,
    )
    log = orchestrator.run()
    summary = compute_metrics(
        log, mode=config.mode, model_parameters=orchestrator.parameter_counts(),
        reward_config=reward_config,
    )
    return RunResult(log=log, summary=summary, orchestrator=orchestrator, curve=curve)
