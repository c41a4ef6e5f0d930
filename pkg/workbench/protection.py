"""Safe-set checks and timed frequency relays.

Relays look at the measured states (dw_meas, rocof_meas) in per-unit and
compare them in Hz against the thresholds.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from django.core.exceptions import ValidationError

from .choices import TerminationMode, TripClass, TripKind
from .constants import BASE_FREQUENCY_HZ, CLEARING_TOLERANCE, RELAY_DEFAULTS
from .grid import DW_MEAS, ROCOF_MEAS, Trace

EXIT_PRECEDENCE = (TripKind.ROCOF, TripKind.OF, TripKind.UF)


@dataclass(frozen=True)
class RelaySettings:
    of_threshold: float = RELAY_DEFAULTS["of_threshold"]
    of_clearing: float = RELAY_DEFAULTS["of_clearing"]
    uf_threshold: float = RELAY_DEFAULTS["uf_threshold"]
    uf_clearing: float = RELAY_DEFAULTS["uf_clearing"]
    rocof_threshold: float = RELAY_DEFAULTS["rocof_threshold"]
    rocof_clearing: float = RELAY_DEFAULTS["rocof_clearing"]

    def clean(self, base_frequency: float = BASE_FREQUENCY_HZ) -> None:
        errors: dict[str, str] = {}
        for name in ("of_threshold", "uf_threshold", "rocof_threshold"):
            if not getattr(self, name) > 0:
                errors[name] = "Threshold must be positive."
        for name in ("of_clearing", "uf_clearing", "rocof_clearing"):
            if not getattr(self, name) >= 0:
                errors[name] = "Clearing time cannot be negative."
        if not errors and not self.uf_threshold < base_frequency < self.of_threshold:
            errors["uf_threshold"] = (
                f"Thresholds must bracket the base frequency ({self.uf_threshold} < {base_frequency} < {self.of_threshold})."
            )
        if errors:
            raise ValidationError(errors)

    @classmethod
    def from_dict(cls, data: dict) -> "RelaySettings":
        allowed = {f.name for f in fields(cls)}
        unknown = set(data) - allowed
        if unknown:
            raise ValidationError({"relay": f"Unknown relay settings: {', '.join(sorted(unknown))}."})
        return cls(**{key: float(value) for key, value in data.items()})

    def to_dict(self) -> dict:
        return asdict(self)

    def clearing_for(self, kind: TripKind) -> float:
        return {
            TripKind.OF: self.of_clearing,
            TripKind.UF: self.uf_clearing,
            TripKind.ROCOF: self.rocof_clearing,
        }[kind]


@dataclass(frozen=True)
class TripEvent:
    kind: TripKind
    time: float

    def to_dict(self) -> dict:
        return {"kind": str(self.kind), "time": float(self.time)}


def _violations(dw: float, rocof: float, settings: RelaySettings, base_frequency: float) -> dict[TripKind, bool]:
    frequency = (1.0 + dw) * base_frequency
    return {
        TripKind.ROCOF: abs(rocof) * base_frequency > settings.rocof_threshold,
        TripKind.OF: frequency > settings.of_threshold,
        TripKind.UF: frequency < settings.uf_threshold,
    }


def in_safe_set(dw: float, rocof: float, settings: RelaySettings, base_frequency: float = BASE_FREQUENCY_HZ) -> bool:
    return not any(_violations(dw, rocof, settings, base_frequency).values())


def exit_cause(
    dw: float, rocof: float, settings: RelaySettings, base_frequency: float = BASE_FREQUENCY_HZ
) -> TripKind | None:
    """Which bound is violated, ROCOF taking precedence over OF, OF over UF."""
    violations = _violations(dw, rocof, settings, base_frequency)
    return dominant_cause(kind for kind, violated in violations.items() if violated)


def dominant_cause(kinds) -> TripKind | None:
    """The highest-precedence exit cause among several, or None."""
    seen = set(kinds)
    for kind in EXIT_PRECEDENCE:
        if kind in seen:
            return kind
    return None


@dataclass
class RelayMonitor:
    """Per-episode relay state: excursion timers, a clock and the latched trip."""

    settings: RelaySettings = field(default_factory=RelaySettings)
    base_frequency: float = BASE_FREQUENCY_HZ
    clock: float = 0.0
    timers: dict = field(default_factory=lambda: {kind: 0.0 for kind in (TripKind.ROCOF, TripKind.OF, TripKind.UF)})
    trip: TripEvent | None = None

    def reset(self, clock: float = 0.0) -> None:
        self.clock = clock
        self.timers = {kind: 0.0 for kind in self.timers}
        self.trip = None

    def copy(self) -> "RelayMonitor":
        return copy.deepcopy(self)


def relay_step(monitor: RelayMonitor, dw: float, rocof: float, dt: float) -> TripEvent | None:
    """Feed one measured sample taken dt seconds after the previous one.

    The sample is stamped at the advanced clock. Once a trip has latched it is
    returned unchanged on every later call.
    """
    if not dt > 0:
        raise ValidationError({"dt": "Relay sample period must be positive."})
    monitor.clock += dt
    if monitor.trip is not None:
        return monitor.trip
    violations = _violations(dw, rocof, monitor.settings, monitor.base_frequency)
    for kind, violated in violations.items():
        monitor.timers[kind] = monitor.timers[kind] + dt if violated else 0.0
    for kind in violations:
        clearing = monitor.settings.clearing_for(kind)
        if violations[kind] and monitor.timers[kind] >= clearing - CLEARING_TOLERANCE:
            monitor.trip = TripEvent(kind=kind, time=monitor.clock)
            break
    return monitor.trip


def classify_trip(event: TripEvent | None) -> TripClass:
    if event is None:
        return TripClass.NONE
    if event.kind == TripKind.ROCOF:
        return TripClass.ROCOF
    return TripClass.UF_OF


def replay_protection(
    trace: Trace,
    settings: RelaySettings,
    mode: TerminationMode = TerminationMode.TIMED_RELAY,
    base_frequency: float = BASE_FREQUENCY_HZ,
) -> TripEvent | None:
    """Re-run safe-set or timed-relay protection over a stored trace."""
    dw = trace.x[:, DW_MEAS]
    rocof = trace.x[:, ROCOF_MEAS]
    if mode == TerminationMode.SAFE_SET:
        for t, w, r in zip(trace.t, dw, rocof):
            kind = exit_cause(float(w), float(r), settings, base_frequency)
            if kind is not None:
                return TripEvent(kind=kind, time=float(t))
        return None
    if mode != TerminationMode.TIMED_RELAY:
        raise ValidationError({"mode": f"Protection replay supports safe-set or timed-relay, not '{mode}'."})
    if len(trace) < 2:
        return None
    monitor = RelayMonitor(settings=settings, base_frequency=base_frequency, clock=float(trace.t[0]))
    for n in range(1, len(trace)):
        event = relay_step(monitor, float(dw[n]), float(rocof[n]), float(trace.t[n] - trace.t[n - 1]))
        if event is not None:
            return event
    return None


def peak_measurements(trace: Trace) -> dict[str, float]:
    """Largest absolute measured frequency deviation and ROCOF over a trace."""
    return {
        "dw_meas": float(np.max(np.abs(trace.x[:, DW_MEAS]))) if len(trace) else 0.0,
        "rocof_meas": float(np.max(np.abs(trace.x[:, ROCOF_MEAS]))) if len(trace) else 0.0,
    }
