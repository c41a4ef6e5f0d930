"""Linear load-frequency control model of a single-area microgrid.

State ordering is (de, dpg, dpm, dw, dw_meas, rocof_meas), all per-unit
deviations from nominal; inputs are u = (dpl, dptie) and attacks
p = (p1, p2, p3, p4). Frequencies are per-unit of the base frequency.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, TextIO

import numpy as np
from django.core.exceptions import ValidationError
from scipy import linalg

from .constants import (
    INTEGRATION_DT,
    SYSTEM_PRESETS,
    TRACE_CSV_HEADER,
)
from .exceptions import NumericalError, ShapeError

logger = logging.getLogger(__name__)

N_STATES = 6
N_INPUTS = 2
N_ATTACKS = 4

DW = 3
DW_MEAS = 4
ROCOF_MEAS = 5


@dataclass(frozen=True)
class SystemParams:
    """Load-frequency control plant parameters."""

    agc_gain: float
    droop_gain: float
    governor_tc: float
    turbine_tc: float
    inertia: float
    damping: float
    freq_sensor_tc: float = 0.1
    rocof_sensor_tc: float = 0.1
    measurement_gain: float = 1.0
    base_frequency: float = 60.0

    def clean(self) -> None:
        errors: dict[str, str] = {}
        for name in ("governor_tc", "turbine_tc", "freq_sensor_tc", "rocof_sensor_tc", "inertia"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                errors[name] = "Must be a positive, finite number."
        for name in ("agc_gain", "droop_gain", "measurement_gain", "base_frequency"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                errors[name] = "Must be a positive, finite number."
        if not np.isfinite(self.damping) or self.damping < 0:
            errors["damping"] = "Must be a non-negative, finite number."
        if errors:
            raise ValidationError(errors)

    @classmethod
    def preset(cls, name: str) -> "SystemParams":
        try:
            values = SYSTEM_PRESETS[name.upper()]
        except KeyError as exc:
            known = ", ".join(sorted(SYSTEM_PRESETS))
            raise ValidationError({"system": f"Unknown preset '{name}'. Known presets: {known}."}) from exc
        return cls(**values)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemParams":
        allowed = {f.name for f in fields(cls)}
        unknown = set(data) - allowed
        if unknown:
            raise ValidationError({"system": f"Unknown parameters: {', '.join(sorted(unknown))}."})
        try:
            params = cls(**{key: float(value) for key, value in data.items()})
        except TypeError as exc:
            raise ValidationError({"system": str(exc)}) from exc
        return params

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class StateMatrices:
    A: np.ndarray
    Bmat: np.ndarray
    W: np.ndarray

    @property
    def inputs(self) -> np.ndarray:
        """Stacked [Bmat W] acting on the concatenated vector [u; p]."""
        return np.hstack([self.Bmat, self.W])


def build_state_matrices(params: SystemParams) -> StateMatrices:
    params.clean()
    k = params.agc_gain
    B = params.measurement_gain
    d = params.droop_gain
    tg = params.governor_tc
    tt = params.turbine_tc
    M = params.inertia
    D = params.damping
    tw = params.freq_sensor_tc
    tv = params.rocof_sensor_tc

    A = np.zeros((N_STATES, N_STATES))
    A[0, 3] = -(k * B)
    A[1, 0] = 1.0 / tg
    A[1, 1] = -1.0 / tg
    A[1, 3] = -d / tg
    A[2, 1] = 1.0 / tt
    A[2, 2] = -1.0 / tt
    A[3, 2] = 1.0 / M
    A[3, 3] = -D / M
    A[4, 3] = 1.0 / tw
    A[4, 4] = -1.0 / tw
    A[5, 2] = 1.0 / (M * tv)
    A[5, 3] = -D / (M * tv)
    A[5, 5] = -1.0 / tv

    Bmat = np.zeros((N_STATES, N_INPUTS))
    # Sign on dptie kept as printed in the source model.
    Bmat[1, 1] = -k
    Bmat[3, 0] = -1.0 / M
    Bmat[5, 0] = -1.0 / (M * tv)

    W = np.zeros((N_STATES, N_ATTACKS))
    W[0, :] = (-(k * B), k, -k, 0.0)
    W[3, 3] = -1.0 / M
    W[5, 3] = -1.0 / (M * tv)

    return StateMatrices(A=A, Bmat=Bmat, W=W)


def _check_shape(name: str, vector: np.ndarray, size: int) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (size,):
        raise ShapeError(f"{name} must have shape ({size},), got {vector.shape}")
    return vector


def derivative(x: np.ndarray, u: np.ndarray, p: np.ndarray, m: StateMatrices) -> np.ndarray:
    """Right-hand side A·x + Bmat·u + W·p."""
    x = _check_shape("x", x, N_STATES)
    u = _check_shape("u", u, N_INPUTS)
    p = _check_shape("p", p, N_ATTACKS)
    return m.A @ x + m.Bmat @ u + m.W @ p


def step(x: np.ndarray, u: np.ndarray, p: np.ndarray, m: StateMatrices, dt: float) -> np.ndarray:
    """Advance one classical RK4 step with inputs held over dt."""
    if not dt > 0:
        raise ValidationError({"dt": "Integration step must be positive."})
    x = _check_shape("x", x, N_STATES)
    forcing = m.Bmat @ _check_shape("u", u, N_INPUTS) + m.W @ _check_shape("p", p, N_ATTACKS)
    k1 = m.A @ x + forcing
    k2 = m.A @ (x + 0.5 * dt * k1) + forcing
    k3 = m.A @ (x + 0.5 * dt * k2) + forcing
    k4 = m.A @ (x + dt * k3) + forcing
    nxt = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(nxt)):
        raise NumericalError("Non-finite plant state", state=nxt.tolist(), dt=dt)
    return nxt


def discrete_propagator(m: StateMatrices, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Matrices (Phi, Gamma) reproducing one RK4 step as Phi·x + Gamma·[u; p]."""
    if not dt > 0:
        raise ValidationError({"dt": "Integration step must be positive."})
    eye = np.eye(N_STATES)
    hA = dt * m.A
    hA2 = hA @ hA
    hA3 = hA2 @ hA
    phi = eye + hA + hA2 / 2.0 + hA3 / 6.0 + (hA3 @ hA) / 24.0
    gamma = dt * (eye + hA / 2.0 + hA2 / 6.0 + hA3 / 24.0) @ m.inputs
    return phi, gamma


Schedule = Callable[[float], np.ndarray]


@dataclass(frozen=True)
class PiecewiseConstantSchedule:
    """Zero-order-held vector signal: values[i] holds on [times[i], times[i+1])."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or len(times) != len(values) or len(times) == 0:
            raise ShapeError("Schedule needs one value row per breakpoint")
        if np.any(np.diff(times) <= 0):
            raise ValidationError({"times": "Breakpoints must be strictly increasing."})
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __call__(self, t: float) -> np.ndarray:
        index = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(index, 0)]


def constant_schedule(value: Iterable[float]) -> PiecewiseConstantSchedule:
    return PiecewiseConstantSchedule(times=np.array([0.0]), values=np.asarray([list(value)], dtype=float))


def zero_inputs() -> PiecewiseConstantSchedule:
    return constant_schedule([0.0] * N_INPUTS)


def zero_attack() -> PiecewiseConstantSchedule:
    return constant_schedule([0.0] * N_ATTACKS)


@dataclass
class Trace:
    """Time-indexed plant states, inputs and attacks at a fixed sample period."""

    sample_period: float
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    annotations: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.t)
        if not (len(self.x) == len(self.u) == len(self.p) == n):
            raise ShapeError("Trace sequences must share one length")
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise ValidationError({"t": "Trace time must be strictly increasing."})

    def __len__(self) -> int:
        return len(self.t)

    def column(self, name: str) -> np.ndarray:
        index = TRACE_CSV_HEADER.index(name)
        if index == 0:
            return self.t
        table = np.hstack([self.x, self.u, self.p])
        return table[:, index - 1]

    def downsample(self, every: int) -> "Trace":
        if every < 1:
            raise ValidationError({"every": "Downsampling stride must be at least 1."})
        return Trace(
            sample_period=self.sample_period * every,
            t=self.t[::every].copy(),
            x=self.x[::every].copy(),
            u=self.u[::every].copy(),
            p=self.p[::every].copy(),
            annotations=list(self.annotations),
        )

    def write_csv(self, stream: TextIO) -> None:
        """Write the trace with one row per sample and annotations as trailing comment rows."""
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(TRACE_CSV_HEADER)
        for row in np.hstack([self.t[:, None], self.x, self.u, self.p]):
            writer.writerow([repr(float(value)) for value in row])
        for note in self.annotations:
            stream.write("# " + ",".join(f"{key}={note[key]}" for key in sorted(note)) + "\n")


def simulate(
    params: SystemParams,
    inputs: Schedule,
    attack: Schedule,
    horizon: float,
    dt: float = INTEGRATION_DT,
    sample_period: float | None = None,
    x0: np.ndarray | None = None,
) -> Trace:
    """Integrate the plant over [0, horizon] and sample it every sample_period seconds."""
    if not horizon > 0:
        raise ValidationError({"horizon": "Horizon must be positive."})
    if not dt > 0:
        raise ValidationError({"dt": "Integration step must be positive."})
    sample_period = dt if sample_period is None else sample_period
    stride = int(round(sample_period / dt))
    if stride < 1 or abs(stride * dt - sample_period) > 1e-9:
        raise ValidationError({"sample_period": "Sample period must be a whole multiple of dt."})

    m = build_state_matrices(params)
    phi, gamma = discrete_propagator(m, dt)
    steps = int(round(horizon / dt))
    x = np.zeros(N_STATES) if x0 is None else _check_shape("x0", x0, N_STATES).copy()

    times, states, us, ps = [], [], [], []
    for n in range(steps + 1):
        t = n * dt
        u = np.asarray(inputs(t), dtype=float)
        p = np.asarray(attack(t), dtype=float)
        if n % stride == 0:
            times.append(t)
            states.append(x.copy())
            us.append(u)
            ps.append(p)
        if n == steps:
            break
        x = phi @ x + gamma @ np.concatenate([u, p])
        if not np.all(np.isfinite(x)):
            raise NumericalError("Non-finite plant state", time=t + dt)

    logger.debug("simulated horizon=%s dt=%s samples=%d", horizon, dt, len(times))
    return Trace(
        sample_period=sample_period,
        t=np.asarray(times),
        x=np.asarray(states),
        u=np.asarray(us),
        p=np.asarray(ps),
    )


def eigenmodes(params: SystemParams) -> np.ndarray:
    """All six eigenvalues of A, conjugate pairs adjacent, sorted by real part then imaginary part."""
    values = linalg.eigvals(build_state_matrices(params).A)
    order = np.lexsort((values.imag, -values.real))
    return values[order]


def dominant_oscillatory_mode(params: SystemParams, min_imag: float = 1e-6) -> complex:
    values = eigenmodes(params)
    oscillatory = values[values.imag > min_imag]
    if len(oscillatory) == 0:
        raise ValidationError({"system": "The plant has no oscillatory eigenpair."})
    return complex(oscillatory[np.argmax(oscillatory.real)])


def modal_report(params: SystemParams) -> list[dict]:
    rows = []
    for value in eigenmodes(params):
        magnitude = abs(value)
        rows.append(
            {
                "real": float(value.real),
                "imag": float(value.imag),
                "natural_frequency_hz": float(magnitude / (2 * np.pi)),
                "damping_ratio": float(-value.real / magnitude) if magnitude > 0 else 1.0,
                "time_constant": float(-1.0 / value.real) if value.real != 0 else float("inf"),
                "oscillatory": bool(abs(value.imag) > 1e-6),
            }
        )
    return rows
