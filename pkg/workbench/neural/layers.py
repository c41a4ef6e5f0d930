"""Layers with explicit forward caches and hand-written backward passes.

Sequences are batched as (batch, time, channels). An optional (batch, time)
mask marks valid steps; recurrent layers carry their state through masked
steps so the final hidden state is the one at the last valid step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from django.core.exceptions import ValidationError

from ..exceptions import ShapeError


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def assign(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.value.shape:
            raise ShapeError(f"Parameter '{self.name}' expects shape {self.value.shape}, got {value.shape}")
        self.value[...] = value


@dataclass
class Context:
    training: bool = False
    rng: np.random.Generator | None = None
    mask: np.ndarray | None = None


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Layer:
    kind = "layer"

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, ctx: Context):
        raise NotImplementedError

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}


class Dense(Layer):
    """Affine map on the last axis; works on vectors and on every step of a sequence."""

    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None) -> None:
        if n_in < 1 or n_out < 1:
            raise ValidationError({"units": "Dense layers need at least one input and one output."})
        rng = rng or np.random.default_rng(0)
        self.n_in = n_in
        self.n_out = n_out
        self.W = Param("W", _uniform(rng, n_in, (n_in, n_out)))
        self.b = Param("b", np.zeros(n_out))

    def params(self) -> list[Param]:
        return [self.W, self.b]

    def forward(self, x, ctx):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"{self.kind} expects {self.n_in} features, got {x.shape[-1]}")
        return x @ self.W.value + self.b.value, x

    def backward(self, cache, dy):
        x = cache
        flat_x = x.reshape(-1, self.n_in)
        flat_dy = dy.reshape(-1, self.n_out)
        self.W.grad += flat_x.T @ flat_dy
        self.b.grad += flat_dy.sum(axis=0)
        return dy @ self.W.value.T

    def spec(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out}


class TimeDistributedDense(Dense):
    kind = "time_distributed_dense"

    def forward(self, x, ctx):
        if x.ndim != 3:
            raise ShapeError(f"time_distributed_dense expects (batch, time, channels), got {x.shape}")
        return super().forward(x, ctx)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, ctx):
        active = x > 0
        return np.where(active, x, 0.0), active

    def backward(self, cache, dy):
        return np.where(cache, dy, 0.0)


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x, ctx):
        y = np.tanh(x)
        return y, y

    def backward(self, cache, dy):
        return dy * (1.0 - cache**2)


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, ctx):
        y = _sigmoid(x)
        return y, y

    def backward(self, cache, dy):
        return dy * cache * (1.0 - cache)


class FixedAffine(Layer):
    """y = x * scale + offset with constant, non-trainable scale and offset."""

    kind = "fixed_affine"

    def __init__(self, scale, offset=0.0) -> None:
        self.scale = np.atleast_1d(np.asarray(scale, dtype=np.float64))
        self.offset = np.atleast_1d(np.asarray(offset, dtype=np.float64))
        if not np.all(np.isfinite(self.scale)) or np.any(self.scale == 0):
            raise ValidationError({"scale": "Scale must be finite and non-zero."})

    def forward(self, x, ctx):
        return x * self.scale + self.offset, None

    def backward(self, cache, dy):
        return dy * self.scale

    def spec(self):
        return {"kind": self.kind, "scale": self.scale.tolist(), "offset": self.offset.tolist()}


class Dropout(Layer):
    """Inverted dropout: scaled at train time, identity at inference."""

    kind = "dropout"

    def __init__(self, rate: float) -> None:
        if not 0.0 <= rate < 1.0:
            raise ValidationError({"rate": "Dropout rate must lie in [0, 1)."})
        self.rate = float(rate)

    def forward(self, x, ctx):
        if not ctx.training or self.rate == 0.0:
            return x, None
        if ctx.rng is None:
            raise ValidationError({"seed": "Training-mode dropout needs a seeded generator."})
        keep = (ctx.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * keep, keep

    def backward(self, cache, dy):
        return dy if cache is None else dy * cache

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, ctx):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=-1, keepdims=True)
        return y, y

    def backward(self, cache, dy):
        y = cache
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


@dataclass
class _LSTMCache:
    x: np.ndarray
    mask: np.ndarray
    h_prev: list
    c_prev: list
    gates: list
    c_new: list


class LSTM(Layer):
    """Single-direction LSTM with gate order (input, forget, cell, output)."""

    kind = "lstm"

    def __init__(
        self, n_in: int, units: int, return_sequences: bool = True, rng: np.random.Generator | None = None
    ) -> None:
        if n_in < 1 or units < 1:
            raise ValidationError({"units": "LSTM layers need at least one input and one unit."})
        rng = rng or np.random.default_rng(0)
        self.n_in = n_in
        self.units = units
        self.return_sequences = return_sequences
        self.W = Param("W", _uniform(rng, n_in, (n_in, 4 * units)))
        self.U = Param("U", _uniform(rng, units, (units, 4 * units)))
        bias = np.zeros(4 * units)
        bias[units : 2 * units] = 1.0
        self.b = Param("b", bias)

    def params(self) -> list[Param]:
        return [self.W, self.U, self.b]

    def forward(self, x, ctx):
        if x.ndim != 3 or x.shape[-1] != self.n_in:
            raise ShapeError(f"lstm expects (batch, time, {self.n_in}), got {x.shape}")
        batch, steps, _ = x.shape
        n = self.units
        mask = np.ones((batch, steps)) if ctx.mask is None else np.asarray(ctx.mask, dtype=np.float64)
        if mask.shape != (batch, steps):
            raise ShapeError(f"mask must have shape {(batch, steps)}, got {mask.shape}")
        h = np.zeros((batch, n))
        c = np.zeros((batch, n))
        outputs = np.empty((batch, steps, n))
        cache = _LSTMCache(x=x, mask=mask, h_prev=[], c_prev=[], gates=[], c_new=[])
        for t in range(steps):
            z = x[:, t] @ self.W.value + h @ self.U.value + self.b.value
            i = _sigmoid(z[:, :n])
            f = _sigmoid(z[:, n : 2 * n])
            g = np.tanh(z[:, 2 * n : 3 * n])
            o = _sigmoid(z[:, 3 * n :])
            c_new = f * c + i * g
            h_new = o * np.tanh(c_new)
            m = mask[:, t, None]
            cache.h_prev.append(h)
            cache.c_prev.append(c)
            cache.gates.append((i, f, g, o))
            cache.c_new.append(c_new)
            c = m * c_new + (1.0 - m) * c
            h = m * h_new + (1.0 - m) * h
            outputs[:, t] = h
        if self.return_sequences:
            return outputs, cache
        return h, cache

    def backward(self, cache, dy):
        batch, steps, _ = cache.x.shape
        n = self.units
        if self.return_sequences:
            dh_out = dy
        else:
            dh_out = np.zeros((batch, steps, n))
            dh_out[:, -1] = dy
        dx = np.zeros_like(cache.x)
        dh_next = np.zeros((batch, n))
        dc_next = np.zeros((batch, n))
        W, U = self.W.value, self.U.value
        for t in reversed(range(steps)):
            m = cache.mask[:, t, None]
            i, f, g, o = cache.gates[t]
            c_new = cache.c_new[t]
            dh = dh_next + dh_out[:, t]
            dc = dc_next
            dh_new = m * dh
            tanh_c = np.tanh(c_new)
            dc_new = m * dc + dh_new * o * (1.0 - tanh_c**2)
            dz = np.concatenate(
                [
                    dc_new * g * i * (1.0 - i),
                    dc_new * cache.c_prev[t] * f * (1.0 - f),
                    dc_new * i * (1.0 - g**2),
                    dh_new * tanh_c * o * (1.0 - o),
                ],
                axis=1,
            )
            self.W.grad += cache.x[:, t].T @ dz
            self.U.grad += cache.h_prev[t].T @ dz
            self.b.grad += dz.sum(axis=0)
            dx[:, t] = dz @ W.T
            dh_next = dz @ U.T + (1.0 - m) * dh
            dc_next = dc_new * f + (1.0 - m) * dc
        return dx

    def spec(self):
        return {
            "kind": self.kind,
            "n_in": self.n_in,
            "units": self.units,
            "return_sequences": self.return_sequences,
        }


def _reverse_valid(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Reverse each sequence's valid prefix in time, leaving padding at the end."""
    out = np.zeros_like(x)
    lengths = mask.sum(axis=1).astype(int)
    for row, length in enumerate(lengths):
        out[row, :length] = x[row, :length][::-1]
    return out


class BiLSTM(Layer):
    """Forward and time-reversed LSTMs; outputs are concatenated on the channel axis."""

    kind = "bilstm"

    def __init__(
        self, n_in: int, units: int, return_sequences: bool = True, rng: np.random.Generator | None = None
    ) -> None:
        rng = rng or np.random.default_rng(0)
        self.n_in = n_in
        self.units = units
        self.return_sequences = return_sequences
        self.forward_lstm = LSTM(n_in, units, return_sequences, rng)
        self.backward_lstm = LSTM(n_in, units, return_sequences, rng)
        for param in self.backward_lstm.params():
            param.name = "reverse_" + param.name

    def params(self) -> list[Param]:
        return self.forward_lstm.params() + self.backward_lstm.params()

    def forward(self, x, ctx):
        if x.ndim != 3:
            raise ShapeError(f"bilstm expects (batch, time, channels), got {x.shape}")
        mask = np.ones(x.shape[:2]) if ctx.mask is None else np.asarray(ctx.mask, dtype=np.float64)
        sub = Context(training=ctx.training, rng=ctx.rng, mask=mask)
        y_fwd, cache_fwd = self.forward_lstm.forward(x, sub)
        y_bwd, cache_bwd = self.backward_lstm.forward(_reverse_valid(x, mask), sub)
        if self.return_sequences:
            y_bwd = _reverse_valid(y_bwd, mask)
        return np.concatenate([y_fwd, y_bwd], axis=-1), (mask, cache_fwd, cache_bwd)

    def backward(self, cache, dy):
        mask, cache_fwd, cache_bwd = cache
        n = self.units
        dy_fwd = dy[..., :n]
        dy_bwd = dy[..., n:]
        if self.return_sequences:
            dy_bwd = _reverse_valid(dy_bwd, mask)
        dx = self.forward_lstm.backward(cache_fwd, dy_fwd)
        dx_rev = self.backward_lstm.backward(cache_bwd, dy_bwd)
        return dx + _reverse_valid(dx_rev, mask)

    def spec(self):
        return {
            "kind": self.kind,
            "n_in": self.n_in,
            "units": self.units,
            "return_sequences": self.return_sequences,
        }


def layer_from_spec(spec: dict) -> Layer:
    """Rebuild a layer with fresh parameters from its description."""
    kind = spec.get("kind")
    try:
        if kind == "dense":
            return Dense(int(spec["n_in"]), int(spec["n_out"]))
        if kind == "time_distributed_dense":
            return TimeDistributedDense(int(spec["n_in"]), int(spec["n_out"]))
        if kind == "fixed_affine":
            return FixedAffine(spec["scale"], spec["offset"])
        if kind == "dropout":
            return Dropout(float(spec["rate"]))
        if kind == "lstm":
            return LSTM(int(spec["n_in"]), int(spec["units"]), bool(spec["return_sequences"]))
        if kind == "bilstm":
            return BiLSTM(int(spec["n_in"]), int(spec["units"]), bool(spec["return_sequences"]))
    except KeyError as exc:
        raise ValidationError({"architecture": f"Layer '{kind}' is missing '{exc.args[0]}'."}) from exc
    simple = {cls.kind: cls for cls in (ReLU, Tanh, Sigmoid, Softmax)}
    if kind in simple:
        return simple[kind]()
    raise ValidationError({"architecture": f"Unknown layer kind '{kind}'."})
