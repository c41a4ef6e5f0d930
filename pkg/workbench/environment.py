"""Episodic attack environment around the LFC plant and its protection."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, TextIO

import numpy as np
from django.core.exceptions import ValidationError

from .choices import AttackChannel, RewardKind, TerminationMode, TripKind, Waveform
from .constants import (
    AGENT_STEP,
    EPISODE_LIMIT,
    FDI_TRAINING_BOUNDS,
    INTEGRATION_DT,
    REWARD_DEFAULTS,
)
from .exceptions import EpisodeFinishedError, NumericalError
from .grid import (
    DW_MEAS,
    N_ATTACKS,
    N_STATES,
    ROCOF_MEAS,
    Schedule,
    SystemParams,
    Trace,
    build_state_matrices,
    discrete_propagator,
    dominant_oscillatory_mode,
    zero_inputs,
)
from .loads import LoadProcessConfig, load_inputs, sample_load_trace
from .protection import RelayMonitor, RelaySettings, TripEvent, dominant_cause, exit_cause, relay_step

logger = logging.getLogger(__name__)

_TIME_EPS = 1e-9


@dataclass(frozen=True)
class RewardConfig:
    rocof_scale: float = REWARD_DEFAULTS["rocof_scale"]
    freq_scale_fdi: float = REWARD_DEFAULTS["freq_scale_fdi"]
    freq_scale_switch: float = REWARD_DEFAULTS["freq_scale_switch"]
    trip_bonus: float = REWARD_DEFAULTS["trip_bonus"]
    uf_of_penalty_fdi: float = REWARD_DEFAULTS["uf_of_penalty_fdi"]

    def clean(self) -> None:
        errors = {
            name: "Scale must be positive."
            for name in ("rocof_scale", "freq_scale_fdi", "freq_scale_switch")
            if not getattr(self, name) > 0
        }
        if errors:
            raise ValidationError(errors)


def reward_fdi(dw: float, rocof: float, trip: TripKind | None, cfg: RewardConfig = RewardConfig()) -> float:
    """High ROCOF while the frequency deviation stays small; bonus for ROCOF exits, penalty for UF/OF."""
    value = (rocof / cfg.rocof_scale) ** 2 * max(0.0, 1.0 - (dw / cfg.freq_scale_fdi) ** 2)
    if trip == TripKind.ROCOF:
        value += cfg.trip_bonus
    elif trip in (TripKind.UF, TripKind.OF):
        value -= cfg.uf_of_penalty_fdi
    return float(value)


def reward_switch(dw: float, rocof: float, trip: TripKind | None, cfg: RewardConfig = RewardConfig()) -> float:
    value = (rocof / cfg.rocof_scale) ** 2 + (dw / cfg.freq_scale_switch) ** 2
    if trip is not None:
        value += cfg.trip_bonus
    return float(value)


REWARD_FUNCTIONS = {
    RewardKind.FDI: reward_fdi,
    RewardKind.SWITCH: reward_switch,
}


def scale_action(raw: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    raw = float(np.clip(raw, -1.0, 1.0))
    return lo + (raw + 1.0) / 2.0 * (hi - lo)


def discretize_switch(p4_raw: float, switch_power: float) -> float:
    return 0.0 if p4_raw < switch_power / 2.0 else switch_power


@dataclass(frozen=True)
class Observation:
    dw: float
    rocof: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dw, self.rocof])

    @classmethod
    def from_state(cls, x: np.ndarray) -> "Observation":
        return cls(dw=float(x[DW_MEAS]), rocof=float(x[ROCOF_MEAS]))


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    done: bool
    trip: TripKind | None
    time: float
    applied: float


@dataclass(frozen=True)
class EnvConfig:
    params: SystemParams
    channel: AttackChannel = AttackChannel.FREQ_MEASUREMENT
    bounds: tuple[float, float] = FDI_TRAINING_BOUNDS
    discrete_switching: bool = False
    switch_power: float = 0.0
    episode_limit: float = EPISODE_LIMIT
    agent_step: float = AGENT_STEP
    reward: RewardConfig = field(default_factory=RewardConfig)
    reward_kind: RewardKind = RewardKind.FDI
    termination: TerminationMode = TerminationMode.SAFE_SET
    relay: RelaySettings = field(default_factory=RelaySettings)
    background_load: bool = False
    load: LoadProcessConfig = field(default_factory=LoadProcessConfig)
    warmup: float = 0.0
    dt: float = INTEGRATION_DT

    def clean(self) -> None:
        self.params.clean()
        self.reward.clean()
        self.relay.clean(self.params.base_frequency)
        errors = {}
        lo, hi = self.bounds
        if self.channel != AttackChannel.LOAD_SWITCH and not lo < hi:
            errors["bounds"] = f"Lower bound must be below upper bound, got [{lo}, {hi}]."
        if self.channel == AttackChannel.LOAD_SWITCH and not self.switch_power > 0:
            errors["switch_power"] = "Load switching needs a positive compromised load."
        if not self.episode_limit > 0:
            errors["episode_limit"] = "Episode limit must be positive."
        if not self.dt > 0:
            errors["dt"] = "Integration step must be positive."
        elif abs(self.agent_step / self.dt - round(self.agent_step / self.dt)) > 1e-6 or self.agent_step < self.dt:
            errors["agent_step"] = "Agent step must be a whole multiple of the integration step."
        if self.warmup < 0:
            errors["warmup"] = "Warm-up cannot be negative."
        if errors:
            raise ValidationError(errors)

    @property
    def action_bounds(self) -> tuple[float, float]:
        if self.channel == AttackChannel.LOAD_SWITCH:
            return (0.0, self.switch_power)
        return tuple(self.bounds)

    @property
    def max_steps(self) -> int:
        return int(np.ceil(self.episode_limit / self.agent_step - _TIME_EPS))

    def shape_action(self, raw: float) -> float:
        value = scale_action(raw, self.action_bounds)
        if self.channel == AttackChannel.LOAD_SWITCH and self.discrete_switching:
            value = discretize_switch(value, self.switch_power)
        return value

    def with_bounds(self, bounds: tuple[float, float]) -> "EnvConfig":
        """Same environment rolled out with different attack bounds."""
        return replace(self, bounds=tuple(bounds))


@dataclass
class EpisodeMetadata:
    channel: str
    bounds: tuple[float, float]
    trip_kind: str | None
    trip_time: float | None
    relay_trip_kind: str | None
    relay_trip_time: float | None
    total_reward: float
    steps: int
    seed: int | None
    episode: int | None = None

    def to_dict(self) -> dict:
        data = asdict(self)
        data["bounds"] = list(self.bounds)
        return data


class AttackEnv:
    """One attack channel driving the plant; relays watch the measured states."""

    def __init__(self, config: EnvConfig) -> None:
        config.clean()
        self.config = config
        self.matrices = build_state_matrices(config.params)
        self.phi, self.gamma = discrete_propagator(self.matrices, config.dt)
        self.substeps = int(round(config.agent_step / config.dt))
        self.monitor = RelayMonitor(settings=config.relay, base_frequency=config.params.base_frequency)
        self._inputs: Schedule = zero_inputs()
        self.done = True
        self.seed: int | None = None

    def reset(self, seed: int | None = None) -> Observation:
        cfg = self.config
        self.seed = seed
        self.x = np.zeros(N_STATES)
        self.t = 0.0
        self._n = 0
        self.steps = 0
        self.total_reward = 0.0
        self.exit: TripEvent | None = None
        self.monitor.reset()
        self.done = False
        if cfg.background_load:
            horizon = cfg.warmup + cfg.episode_limit + cfg.agent_step
            load = sample_load_trace(cfg.load, horizon, 0 if seed is None else seed)
            self._warm_up(load_inputs(load))
            self._inputs = load_inputs(load, offset=cfg.warmup)
        else:
            self._inputs = zero_inputs()
        self._t = [0.0]
        self._x = [self.x.copy()]
        self._u = [np.asarray(self._inputs(0.0), dtype=float)]
        self._p = [np.zeros(N_ATTACKS)]
        return Observation.from_state(self.x)

    def _warm_up(self, inputs: Schedule) -> None:
        n = int(round(self.config.warmup / self.config.dt))
        zeros = np.zeros(N_ATTACKS)
        for k in range(n):
            self.x = self.phi @ self.x + self.gamma @ np.concatenate([inputs(k * self.config.dt), zeros])

    def _terminating_event(self) -> TripEvent | None:
        mode = self.config.termination
        if mode == TerminationMode.SAFE_SET:
            return self.exit
        if mode == TerminationMode.TIMED_RELAY:
            return self.monitor.trip
        return None

    def step(self, raw: float) -> StepResult:
        """Hold the shaped action for one agent step."""
        applied = self.config.shape_action(raw)
        return self._advance(lambda t: applied, applied)

    def step_schedule(self, attack: Schedule) -> StepResult:
        """Advance one agent step driven by an open-loop attack schedule on the configured channel.

        The schedule is evaluated every integration step, then clipped to the
        action bounds (or discretized for load switching).
        """
        cfg = self.config
        index = AttackChannel(cfg.channel).index
        lo, hi = cfg.action_bounds

        def value(t: float) -> float:
            v = float(np.clip(attack(t)[index], lo, hi))
            if cfg.channel == AttackChannel.LOAD_SWITCH and cfg.discrete_switching:
                v = discretize_switch(v, cfg.switch_power)
            return v

        return self._advance(value, value(self.t))

    def _advance(self, value: Callable[[float], float], applied: float) -> StepResult:
        if self.done:
            raise EpisodeFinishedError("The episode has finished; call reset() first.")
        cfg = self.config
        index = AttackChannel(cfg.channel).index
        base = cfg.params.base_frequency
        exit_before = self.exit
        causes: set[TripKind] = set()
        terminal: tuple[float, float] | None = None

        for _ in range(self.substeps):
            u = np.asarray(self._inputs(self.t), dtype=float)
            p = np.zeros(N_ATTACKS)
            p[index] = value(self.t)
            self.x = self.phi @ self.x + self.gamma @ np.concatenate([u, p])
            self._n += 1
            self.t = self._n * cfg.dt
            if not np.all(np.isfinite(self.x)):
                self.done = True
                raise NumericalError("Non-finite plant state", time=round(self.t, 6), seed=self.seed)
            self._t.append(self.t)
            self._x.append(self.x.copy())
            self._u.append(u)
            self._p.append(p)
            dw, rocof = float(self.x[DW_MEAS]), float(self.x[ROCOF_MEAS])
            if exit_before is None:
                kind = exit_cause(dw, rocof, cfg.relay, base)
                if kind is not None:
                    causes.add(kind)
                    if self.exit is None:
                        self.exit = TripEvent(kind=kind, time=self.t)
            relay_step(self.monitor, dw, rocof, cfg.dt)
            if terminal is None and self._terminating_event() is not None:
                terminal = (dw, rocof)

        self.steps += 1
        event = self._terminating_event()
        # Safe-set exits are credited per agent step: every cause seen in the step competes.
        if cfg.termination == TerminationMode.TIMED_RELAY:
            credited = event.kind if event else None
        else:
            credited = dominant_cause(causes)
        observation = Observation.from_state(self.x)
        dw, rocof = terminal if terminal is not None else (observation.dw, observation.rocof)
        reward = REWARD_FUNCTIONS[RewardKind(cfg.reward_kind)](dw, rocof, credited, cfg.reward)
        self.total_reward += reward
        self.done = event is not None or self.t >= cfg.episode_limit - _TIME_EPS
        return StepResult(
            observation=observation,
            reward=reward,
            done=self.done,
            trip=credited,
            time=self.t,
            applied=applied,
        )

    @property
    def terminated(self) -> bool:
        """True when protection, not the time limit, ended the episode."""
        return self._terminating_event() is not None

    @property
    def trip(self) -> TripEvent | None:
        """First protection event of the episode, as seen by the configured termination mode."""
        if self.config.termination == TerminationMode.TIMED_RELAY:
            return self.monitor.trip
        return self.exit

    def trace(self) -> Trace:
        annotations = []
        if self.exit is not None:
            annotations.append({"event": "safe_set_exit", **self.exit.to_dict()})
        if self.monitor.trip is not None:
            annotations.append({"event": "relay_trip", **self.monitor.trip.to_dict()})
        return Trace(
            sample_period=self.config.dt,
            t=np.asarray(self._t),
            x=np.asarray(self._x),
            u=np.asarray(self._u),
            p=np.asarray(self._p),
            annotations=annotations,
        )

    def metadata(self, episode: int | None = None) -> EpisodeMetadata:
        trip = self.trip
        relay = self.monitor.trip
        return EpisodeMetadata(
            channel=str(self.config.channel),
            bounds=self.config.action_bounds,
            trip_kind=str(trip.kind) if trip else None,
            trip_time=trip.time if trip else None,
            relay_trip_kind=str(relay.kind) if relay else None,
            relay_trip_time=relay.time if relay else None,
            total_reward=float(self.total_reward),
            steps=self.steps,
            seed=self.seed,
            episode=episode,
        )


Policy = Callable[[Observation], float]


@dataclass
class EpisodeRecord:
    metadata: EpisodeMetadata
    trace: Trace
    rewards: list[float]

    def write(self, csv_stream: TextIO, json_stream: TextIO) -> None:
        self.trace.write_csv(csv_stream)
        json.dump(self.metadata.to_dict(), json_stream, indent=2, sort_keys=True)
        json_stream.write("\n")

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata.to_dict(),
            "sample_period": self.trace.sample_period,
            "t": self.trace.t.tolist(),
            "x": self.trace.x.tolist(),
            "u": self.trace.u.tolist(),
            "p": self.trace.p.tolist(),
            "rewards": list(self.rewards),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeRecord":
        meta = dict(data["metadata"])
        meta["bounds"] = tuple(meta["bounds"])
        trace = Trace(
            sample_period=float(data["sample_period"]),
            t=np.asarray(data["t"], dtype=float),
            x=np.asarray(data["x"], dtype=float).reshape(-1, N_STATES),
            u=np.asarray(data["u"], dtype=float).reshape(-1, 2),
            p=np.asarray(data["p"], dtype=float).reshape(-1, N_ATTACKS),
        )
        return cls(metadata=EpisodeMetadata(**meta), trace=trace, rewards=list(data.get("rewards", [])))


def run_episode(
    env: AttackEnv, policy: Policy, seed: int | None = None, episode: int | None = None
) -> EpisodeRecord:
    """Roll a policy until the episode ends."""
    observation = env.reset(seed)
    rewards = []
    while True:
        result = env.step(policy(observation))
        rewards.append(result.reward)
        observation = result.observation
        if result.done:
            break
    meta = env.metadata(episode)
    logger.info(
        "episode=%s return=%.3f steps=%d trip=%s", episode, meta.total_reward, meta.steps, meta.trip_kind
    )
    return EpisodeRecord(metadata=meta, trace=env.trace(), rewards=rewards)


def run_open_loop(env: AttackEnv, attack: Schedule, seed: int | None = None, episode: int | None = None) -> EpisodeRecord:
    """Drive an episode with a fixed attack schedule instead of a policy."""
    env.reset(seed)
    rewards = []
    while True:
        result = env.step_schedule(attack)
        rewards.append(result.reward)
        if result.done:
            break
    return EpisodeRecord(metadata=env.metadata(episode), trace=env.trace(), rewards=rewards)


@dataclass(frozen=True)
class OracleAttack:
    """Periodic attack at the least-damped eigenmode frequency on one channel."""

    channel: AttackChannel
    amplitude: float
    waveform: Waveform
    frequency: float

    def value(self, t: float) -> float:
        phase = np.sin(self.frequency * t)
        if self.channel == AttackChannel.LOAD_SWITCH:
            if self.waveform == Waveform.SQUARE:
                return self.amplitude if phase >= 0 else 0.0
            return self.amplitude * (1.0 + phase) / 2.0
        if self.waveform == Waveform.SQUARE:
            return self.amplitude if phase >= 0 else -self.amplitude
        return self.amplitude * phase

    def __call__(self, t: float) -> np.ndarray:
        p = np.zeros(N_ATTACKS)
        p[AttackChannel(self.channel).index] = self.value(t)
        return p


def oracle_attack(
    params: SystemParams, channel: AttackChannel, amplitude: float, waveform: Waveform = Waveform.SINE
) -> OracleAttack:
    mode = dominant_oscillatory_mode(params)
    return OracleAttack(
        channel=AttackChannel(channel),
        amplitude=float(amplitude),
        waveform=Waveform(waveform),
        frequency=abs(mode.imag),
    )


@dataclass(frozen=True)
class ConstantAttack:
    channel: AttackChannel
    amplitude: float

    def __call__(self, t: float) -> np.ndarray:
        p = np.zeros(N_ATTACKS)
        p[AttackChannel(self.channel).index] = self.amplitude
        return p


def time_to_exit(
    attack: Schedule,
    params: SystemParams,
    relay: RelaySettings = RelaySettings(),
    horizon: float = EPISODE_LIMIT,
    mode: TerminationMode = TerminationMode.SAFE_SET,
    dt: float = INTEGRATION_DT,
    inputs: Schedule | None = None,
) -> TripEvent | None:
    """Open-loop rollout of an attack schedule; the first exit or relay trip, if any."""
    if mode == TerminationMode.SUPPRESSED:
        raise ValidationError({"mode": "An exit time needs safe-set or timed-relay protection."})
    inputs = inputs or zero_inputs()
    phi, gamma = discrete_propagator(build_state_matrices(params), dt)
    monitor = RelayMonitor(settings=relay, base_frequency=params.base_frequency)
    x = np.zeros(N_STATES)
    for n in range(int(round(horizon / dt))):
        t = n * dt
        x = phi @ x + gamma @ np.concatenate([np.asarray(inputs(t), dtype=float), attack(t)])
        dw, rocof = float(x[DW_MEAS]), float(x[ROCOF_MEAS])
        if mode == TerminationMode.SAFE_SET:
            kind = exit_cause(dw, rocof, relay, params.base_frequency)
            if kind is not None:
                return TripEvent(kind=kind, time=t + dt)
        else:
            event = relay_step(monitor, dw, rocof, dt)
            if event is not None:
                return event
    return None


def oracle_vs_constant(
    params: SystemParams,
    channel: AttackChannel = AttackChannel.FREQ_MEASUREMENT,
    amplitude: float = 0.1,
    waveform: Waveform = Waveform.SQUARE,
    resolution: float = 0.01,
    relay: RelaySettings = RelaySettings(),
    horizon: float = EPISODE_LIMIT,
) -> dict:
    """Exit time of the eigenmode oracle against every constant bias in [-amplitude, amplitude].

    The square carrier is the bang-bang form of the oracle; pass
    ``waveform=Waveform.SINE`` to compare the sinusoid instead.
    """
    if not resolution > 0:
        raise ValidationError({"resolution": "Sweep resolution must be positive."})
    oracle = oracle_attack(params, channel, amplitude, waveform)
    oracle_event = time_to_exit(oracle, params, relay, horizon)
    count = int(round(amplitude / resolution))
    sweep = []
    for bias in resolution * np.arange(-count, count + 1):
        event = time_to_exit(ConstantAttack(AttackChannel(channel), float(bias)), params, relay, horizon)
        sweep.append(
            {
                "bias": round(float(bias), 12),
                "kind": str(event.kind) if event else None,
                "time": event.time if event else None,
            }
        )
    exits = [row["time"] for row in sweep if row["time"] is not None]
    best = min(exits) if exits else None
    return {
        "frequency": oracle.frequency,
        "waveform": str(oracle.waveform),
        "oracle_kind": str(oracle_event.kind) if oracle_event else None,
        "oracle_time": oracle_event.time if oracle_event else None,
        "best_constant_time": best,
        "oracle_faster": bool(oracle_event is not None and (best is None or oracle_event.time < best)),
        "sweep": sweep,
    }

