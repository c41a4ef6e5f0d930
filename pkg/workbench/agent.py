"""DDPG attacker: actor/critic networks, replay, updates and the training loop."""
from __future__ import annotations

import json
import logging
from collections import Counter, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, TextIO

import numpy as np
from django.core.exceptions import ValidationError

from .choices import OutputActivation, RewardKind, TripKind
from .constants import (
    ACTOR_HIDDEN,
    AGENT_DEFAULTS,
    CRITIC_ACTION_HIDDEN,
    CRITIC_OBSERVATION_HIDDEN,
    OBSERVATION_SCALES,
    RECORD_DT,
)
from .environment import AttackEnv, EnvConfig, EpisodeRecord, Observation, run_episode
from .exceptions import NumericalError
from .neural import SGD, Dense, FixedAffine, Network, ReLU, Sigmoid, Tanh, network_from_dict, network_to_dict

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgentConfig:
    batch_size: int = AGENT_DEFAULTS["batch_size"]
    actor_lr: float = AGENT_DEFAULTS["actor_lr"]
    critic_lr: float = AGENT_DEFAULTS["critic_lr"]
    gamma: float = AGENT_DEFAULTS["gamma"]
    tau: float = AGENT_DEFAULTS["tau"]
    noise_std: float = AGENT_DEFAULTS["noise_std"]
    noise_decay: float = AGENT_DEFAULTS["noise_decay"]
    buffer_capacity: int = AGENT_DEFAULTS["buffer_capacity"]
    max_episodes: int = AGENT_DEFAULTS["max_episodes"]
    output_activation: OutputActivation = OutputActivation(AGENT_DEFAULTS["output_activation"])
    target_update_period: int = AGENT_DEFAULTS["target_update_period"]
    early_stop_window: int = AGENT_DEFAULTS["early_stop_window"]
    early_stop_rate: float = AGENT_DEFAULTS["early_stop_rate"]

    def clean(self) -> None:
        errors = {}
        if not 0 < self.gamma <= 1:
            errors["gamma"] = "Discount must lie in (0, 1]."
        if not 0 < self.tau <= 1:
            errors["tau"] = "Soft-update rate must lie in (0, 1]."
        if self.batch_size < 1:
            errors["batch_size"] = "Batch size must be at least 1."
        if self.buffer_capacity < 1:
            errors["buffer_capacity"] = "Buffer capacity must be at least 1."
        if self.max_episodes < 1:
            errors["max_episodes"] = "Train for at least one episode."
        if self.noise_std < 0:
            errors["noise_std"] = "Noise standard deviation cannot be negative."
        if not 0 < self.noise_decay <= 1:
            errors["noise_decay"] = "Noise decay must lie in (0, 1]."
        if self.early_stop_window < 0:
            errors["early_stop_window"] = "Window cannot be negative; 0 disables early stopping."
        if self.target_update_period < 1:
            errors["target_update_period"] = "Target update period must be at least 1."
        for name in ("actor_lr", "critic_lr"):
            if not getattr(self, name) > 0:
                errors[name] = "Learning rate must be positive."
        if self.output_activation not in OutputActivation.values:
            errors["output_activation"] = f"Choose one of {', '.join(OutputActivation.values)}."
        if errors:
            raise ValidationError(errors)

    @classmethod
    def from_dict(cls, data: dict) -> "AgentConfig":
        allowed = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(allowed)
        if unknown:
            raise ValidationError({"agent": f"Unknown agent settings: {', '.join(sorted(unknown))}."})
        values = {}
        for key, value in data.items():
            default = allowed[key].default
            if key == "output_activation":
                values[key] = str(value)
            elif isinstance(default, int) and not isinstance(default, bool):
                values[key] = int(value)
            else:
                values[key] = float(value)
        return cls(**values)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["output_activation"] = str(self.output_activation)
        return data


@dataclass(frozen=True)
class Experience:
    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


class ReplayBuffer:
    """FIFO ring of experiences with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, initial: int = 1024) -> None:
        if capacity < 1:
            raise ValidationError({"buffer_capacity": "Capacity must be at least 1."})
        self.capacity = capacity
        self._allocate(min(capacity, initial))
        self.size = 0
        self.cursor = 0

    def _allocate(self, rows: int) -> None:
        self.states = np.zeros((rows, 2))
        self.actions = np.zeros(rows)
        self.rewards = np.zeros(rows)
        self.next_states = np.zeros((rows, 2))
        self.terminals = np.zeros(rows, dtype=bool)

    def _grow(self) -> None:
        old = (self.states, self.actions, self.rewards, self.next_states, self.terminals)
        rows = min(self.capacity, 2 * len(self.rewards))
        self._allocate(rows)
        for new, previous in zip(
            (self.states, self.actions, self.rewards, self.next_states, self.terminals), old
        ):
            new[: len(previous)] = previous

    def __len__(self) -> int:
        return self.size

    def add(self, experience: Experience) -> None:
        values = (experience.state, experience.action, experience.reward, experience.next_state)
        if not all(np.all(np.isfinite(v)) for v in values):
            raise NumericalError("Non-finite experience", action=experience.action, reward=experience.reward)
        if self.size < self.capacity and self.cursor == len(self.rewards):
            self._grow()
        i = self.cursor
        self.states[i] = experience.state
        self.actions[i] = experience.action
        self.rewards[i] = experience.reward
        self.next_states[i] = experience.next_state
        self.terminals[i] = experience.terminal
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size:
            raise ValidationError({"batch_size": f"Buffer holds {self.size} experiences, need {batch_size}."})
        index = rng.integers(0, self.size, size=batch_size)
        return Batch(
            states=self.states[index],
            actions=self.actions[index, None],
            rewards=self.rewards[index],
            next_states=self.next_states[index],
            terminals=self.terminals[index],
        )

    def oldest(self) -> int:
        """Row holding the oldest stored experience."""
        return self.cursor if self.size == self.capacity else 0


@dataclass
class AgentNets:
    actor: Network
    critic: Network
    target_actor: Network
    target_critic: Network


def build_actor(config: AgentConfig, rng: np.random.Generator) -> Network:
    first, second = ACTOR_HIDDEN
    head = Tanh() if config.output_activation == OutputActivation.TANH else Sigmoid()
    # Actor outputs live in the normalized range [-1, 1] for either head.
    scaling = FixedAffine(1.0, 0.0) if config.output_activation == OutputActivation.TANH else FixedAffine(2.0, -1.0)
    return Network(
        [
            FixedAffine(1.0 / np.asarray(OBSERVATION_SCALES)),
            Dense(2, first, rng),
            ReLU(),
            Dense(first, second, rng),
            ReLU(),
            Dense(second, 1, rng),
            head,
            scaling,
        ]
    )


def build_critic(rng: np.random.Generator) -> Network:
    first, second = CRITIC_OBSERVATION_HIDDEN
    return Network(
        [
            FixedAffine(1.0 / np.asarray(OBSERVATION_SCALES)),
            Dense(2, first, rng),
            ReLU(),
            Dense(first, second, rng),
            ReLU(),
            Dense(second, 1, rng),
        ],
        branch=[FixedAffine(1.0), Dense(1, CRITIC_ACTION_HIDDEN, rng)],
        merge_at=4,
    )


def build_nets(config: AgentConfig, seed: int | None = None) -> AgentNets:
    config.clean()
    actor_rng, critic_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    actor = build_actor(config, actor_rng)
    critic = build_critic(critic_rng)
    return AgentNets(actor=actor, critic=critic, target_actor=actor.copy(), target_critic=critic.copy())


def policy_action(actor: Network, state: np.ndarray) -> np.ndarray:
    """Deterministic actor output for one state (shape (2,)) or a batch (shape (n, 2))."""
    state = np.asarray(state, dtype=np.float64)
    if state.ndim == 1:
        return actor.predict(state[None, :])[0]
    return actor.predict(state)


def select_action(nets: AgentNets, state: np.ndarray, noise_std: float, rng: np.random.Generator) -> float:
    """Actor output plus Gaussian exploration noise, clamped to [-1, 1]."""
    action = float(policy_action(nets.actor, state)[0])
    if noise_std > 0:
        action += float(rng.normal(0.0, noise_std))
    return float(np.clip(action, -1.0, 1.0))


def td_target(batch: Batch, nets: AgentNets, gamma: float) -> np.ndarray:
    next_actions = nets.target_actor.predict(batch.next_states)
    next_q = nets.target_critic.predict(batch.next_states, next_actions)[:, 0]
    return np.where(batch.terminals, batch.rewards, batch.rewards + gamma * next_q)


def critic_update(nets: AgentNets, batch: Batch, targets: np.ndarray, optimizer: SGD) -> float:
    """One descent step on the mean squared TD error; returns the loss before the step."""
    q, cache = nets.critic.forward(batch.states, branch_input=batch.actions)
    error = targets - q[:, 0]
    loss = float(np.mean(error**2))
    if not np.isfinite(loss):
        raise NumericalError("Non-finite critic loss")
    nets.critic.zero_grad()
    nets.critic.backward(cache, (-2.0 / len(batch) * error)[:, None])
    optimizer.step(nets.critic)
    return loss


def actor_update(nets: AgentNets, batch: Batch, optimizer: SGD) -> float:
    """Deterministic policy-gradient ascent on mean Q(S, pi(S)); returns the objective before the step."""
    actions, actor_cache = nets.actor.forward(batch.states)
    q, critic_cache = nets.critic.forward(batch.states, branch_input=actions)
    objective = float(np.mean(q))
    if not np.isfinite(objective):
        raise NumericalError("Non-finite policy objective")
    nets.critic.zero_grad()
    _, d_actions = nets.critic.backward(critic_cache, np.full_like(q, -1.0 / len(batch)))
    nets.critic.zero_grad()
    nets.actor.zero_grad()
    nets.actor.backward(actor_cache, d_actions)
    optimizer.step(nets.actor)
    return objective


def soft_update(target: Network, online: Network, tau: float) -> None:
    for t, o in zip(target.parameters(), online.parameters(), strict=True):
        t.value[...] = tau * o.value + (1.0 - tau) * t.value
    target.bump_version()


@dataclass
class TrainingLogEntry:
    episode: int
    episode_return: float
    length: int
    trip_kind: str | None
    trip_time: float | None
    final_observation: tuple[float, float]
    noise_std: float
    trace_index: int | None = None

    def to_dict(self) -> dict:
        data = asdict(self)
        data["final_observation"] = list(self.final_observation)
        return data


@dataclass
class TrainingResult:
    nets: AgentNets
    log: list[TrainingLogEntry]
    episodes: list[EpisodeRecord] = field(default_factory=list)
    stopped_early: bool = False


def is_success(trip_kind: str | None, reward_kind: RewardKind) -> bool:
    if reward_kind == RewardKind.FDI:
        return trip_kind == TripKind.ROCOF
    return trip_kind is not None


def train(
    env_config: EnvConfig,
    config: AgentConfig,
    seed: int = 0,
    keep_traces: bool = True,
    on_episode: Callable[[TrainingLogEntry], None] | None = None,
) -> TrainingResult:
    """Train an attacker with DDPG; every episode trace is kept at the record period when asked."""
    config.clean()
    init_seed, noise_seed, replay_seed, env_seed = np.random.SeedSequence(seed).spawn(4)
    nets = build_nets(config, int(init_seed.generate_state(1)[0]))
    noise_rng = np.random.default_rng(noise_seed)
    replay_rng = np.random.default_rng(replay_seed)
    episode_seeds = np.random.default_rng(env_seed).integers(0, 2**31 - 1, size=config.max_episodes)
    actor_opt = SGD(config.actor_lr)
    critic_opt = SGD(config.critic_lr)
    buffer = ReplayBuffer(config.buffer_capacity)
    env = AttackEnv(env_config)
    stride = max(1, int(round(RECORD_DT / env_config.dt)))
    successes: deque[bool] = deque(maxlen=config.early_stop_window)
    log: list[TrainingLogEntry] = []
    episodes: list[EpisodeRecord] = []
    updates = 0
    stopped_early = False

    for episode in range(config.max_episodes):
        noise_std = config.noise_std * config.noise_decay**episode
        state = env.reset(int(episode_seeds[episode])).as_array()
        rewards = []
        try:
            while True:
                raw = select_action(nets, state, noise_std, noise_rng)
                result = env.step(raw)
                next_state = result.observation.as_array()
                buffer.add(Experience(state, raw, result.reward, next_state, result.done and env.terminated))
                rewards.append(result.reward)
                state = next_state
                if len(buffer) >= config.batch_size:
                    batch = buffer.sample(config.batch_size, replay_rng)
                    critic_update(nets, batch, td_target(batch, nets, config.gamma), critic_opt)
                    actor_update(nets, batch, actor_opt)
                    updates += 1
                    if updates % config.target_update_period == 0:
                        soft_update(nets.target_actor, nets.actor, config.tau)
                        soft_update(nets.target_critic, nets.critic, config.tau)
                if result.done:
                    break
        except NumericalError as exc:
            logger.error("training aborted episode=%d error=%s", episode, exc)
            raise NumericalError("Training aborted", episode=episode, cause=str(exc)) from exc

        meta = env.metadata(episode)
        trace_index = None
        if keep_traces:
            trace_index = len(episodes)
            episodes.append(EpisodeRecord(metadata=meta, trace=env.trace().downsample(stride), rewards=rewards))
        entry = TrainingLogEntry(
            episode=episode,
            episode_return=meta.total_reward,
            length=meta.steps,
            trip_kind=meta.trip_kind,
            trip_time=meta.trip_time,
            final_observation=(float(state[0]), float(state[1])),
            noise_std=noise_std,
            trace_index=trace_index,
        )
        log.append(entry)
        logger.info(
            "episode=%d return=%.3f length=%d trip=%s", episode, entry.episode_return, entry.length, entry.trip_kind
        )
        if on_episode is not None:
            on_episode(entry)
        successes.append(is_success(meta.trip_kind, RewardKind(env_config.reward_kind)))
        if config.early_stop_window and len(successes) == config.early_stop_window and np.mean(successes) >= config.early_stop_rate:
            logger.info("early stop episode=%d success_rate=%.3f", episode, float(np.mean(successes)))
            stopped_early = True
            break

    return TrainingResult(nets=nets, log=log, episodes=episodes, stopped_early=stopped_early)


def _greedy_episode(args) -> dict:
    actor_state, env_config, seed = args
    actor, _ = network_from_dict(actor_state)
    env = AttackEnv(env_config)
    record = run_episode(env, lambda obs: float(policy_action(actor, obs.as_array())[0]), seed=seed)
    return {"trip_kind": record.metadata.trip_kind, "trip_time": record.metadata.trip_time}


def evaluate_policy(
    nets: AgentNets, env_config: EnvConfig, episodes: int = 20, seed: int = 0, workers: int = 1
) -> dict:
    """Noise-free rollouts: trip rate, counts per kind and median time to trip."""
    if episodes < 1:
        raise ValidationError({"episodes": "Evaluate at least one episode."})
    seeds = [int(s) for s in np.random.default_rng(seed).integers(0, 2**31 - 1, size=episodes)]
    jobs = [(network_to_dict(nets.actor), env_config, s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_greedy_episode, jobs))
    else:
        outcomes = [_greedy_episode(job) for job in jobs]
    counts = Counter(o["trip_kind"] or "none" for o in outcomes)
    times = [o["trip_time"] for o in outcomes if o["trip_time"] is not None]
    return {
        "episodes": episodes,
        "trip_rate": (episodes - counts.get("none", 0)) / episodes,
        "counts": {kind: counts.get(kind, 0) for kind in ("none", *TripKind.values)},
        "median_time_to_trip": float(np.median(times)) if times else None,
    }


def greedy_policy(nets: AgentNets) -> Callable[[Observation], float]:
    return lambda obs: float(policy_action(nets.actor, obs.as_array())[0])


def agent_to_dict(nets: AgentNets, config: AgentConfig) -> dict:
    return {
        "agent": config.to_dict(),
        "actor": network_to_dict(nets.actor),
        "critic": network_to_dict(nets.critic),
        "target_actor": network_to_dict(nets.target_actor),
        "target_critic": network_to_dict(nets.target_critic),
    }


def save_agent(path: Path, nets: AgentNets, config: AgentConfig) -> None:
    Path(path).write_text(json.dumps(agent_to_dict(nets, config), sort_keys=True))


def load_agent(path: Path) -> tuple[AgentNets, AgentConfig]:
    try:
        data = json.loads(Path(path).read_text())
        config = AgentConfig.from_dict(data["agent"])
        nets = AgentNets(
            **{name: network_from_dict(data[name])[0] for name in ("actor", "critic", "target_actor", "target_critic")}
        )
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ValidationError({"checkpoint": f"{path} is not an agent checkpoint: {exc}"}) from exc
    return nets, config


def write_training_log(log: list[TrainingLogEntry], stream: TextIO) -> None:
    for entry in log:
        stream.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")
