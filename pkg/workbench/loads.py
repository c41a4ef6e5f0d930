"""Normal-operation demand: a fast and a slow Gaussian random walk added together."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from typing import TextIO

import numpy as np
from django.core.exceptions import ValidationError

from .constants import LOAD_CSV_HEADER, LOAD_PROCESS_DEFAULTS
from .grid import PiecewiseConstantSchedule


@dataclass(frozen=True)
class LoadProcessConfig:
    sigma_fast: float = LOAD_PROCESS_DEFAULTS["sigma_fast"]
    sigma_slow: float = LOAD_PROCESS_DEFAULTS["sigma_slow"]
    fast_step: float = LOAD_PROCESS_DEFAULTS["fast_step"]
    slow_step: float = LOAD_PROCESS_DEFAULTS["slow_step"]
    clamp: float | None = LOAD_PROCESS_DEFAULTS["clamp"]

    def clean(self) -> None:
        errors = {}
        if not self.sigma_fast >= 0:
            errors["sigma_fast"] = "Standard deviation cannot be negative."
        if not self.sigma_slow >= 0:
            errors["sigma_slow"] = "Standard deviation cannot be negative."
        if not self.fast_step > 0:
            errors["fast_step"] = "Step must be positive."
        if not self.slow_step > 0:
            errors["slow_step"] = "Step must be positive."
        if self.clamp is not None and not self.clamp > 0:
            errors["clamp"] = "Clamp must be positive when set."
        if errors:
            raise ValidationError(errors)

    @classmethod
    def from_dict(cls, data: dict) -> "LoadProcessConfig":
        allowed = {f.name for f in fields(cls)}
        unknown = set(data) - allowed
        if unknown:
            raise ValidationError({"load": f"Unknown load settings: {', '.join(sorted(unknown))}."})
        values = {key: (None if value is None else float(value)) for key, value in data.items()}
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)


def _increment_times(step: float, duration: float) -> np.ndarray:
    count = int(np.floor(duration / step + 1e-9))
    return step * np.arange(1, count + 1)


def _walk(times: np.ndarray, at: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    increments = rng.normal(0.0, sigma, size=len(times)) if sigma > 0 else np.zeros(len(times))
    levels = np.concatenate([[0.0], np.cumsum(increments)])
    return levels[np.searchsorted(times, at, side="right")]


def sample_load_trace(config: LoadProcessConfig, duration: float, seed: int) -> PiecewiseConstantSchedule:
    """Sample dpl(t) on [0, duration] as a zero-order-held schedule starting at zero."""
    config.clean()
    if not duration > 0:
        raise ValidationError({"duration": "Duration must be positive."})
    fast_rng, slow_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    fast_times = _increment_times(config.fast_step, duration)
    slow_times = _increment_times(config.slow_step, duration)
    breakpoints = np.unique(np.concatenate([[0.0], fast_times, slow_times]))
    values = _walk(fast_times, breakpoints, config.sigma_fast, fast_rng)
    values = values + _walk(slow_times, breakpoints, config.sigma_slow, slow_rng)
    if config.clamp is not None:
        values = np.clip(values, -config.clamp, config.clamp)
    return PiecewiseConstantSchedule(times=breakpoints, values=values)


def load_inputs(load: PiecewiseConstantSchedule, offset: float = 0.0):
    """Wrap a dpl schedule as the (dpl, dptie) input vector, optionally time-shifted."""

    def inputs(t: float) -> np.ndarray:
        return np.array([float(load(t + offset)[0]), 0.0])

    return inputs


def write_load_csv(load: PiecewiseConstantSchedule, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(LOAD_CSV_HEADER)
    for t, value in zip(load.times, load.values[:, 0]):
        writer.writerow([repr(float(t)), repr(float(value))])
