from __future__ import annotations

import numpy as np
from django.core.exceptions import ValidationError

from ..choices import OptimizerKind
from ..constants import ADAM_BETAS, ADAM_EPSILON
from ..exceptions import NumericalError
from .network import Network


class Optimizer:
    kind: OptimizerKind

    def __init__(self, learning_rate: float) -> None:
        if not learning_rate > 0:
            raise ValidationError({"learning_rate": "Learning rate must be positive."})
        self.learning_rate = float(learning_rate)

    def step(self, network: Network) -> None:
        params = network.parameters()
        for index, param in enumerate(params):
            if not np.all(np.isfinite(param.grad)):
                raise NumericalError("Non-finite gradient", parameter=param.name, index=index)
        self._apply(params)
        network.bump_version()

    def _apply(self, params) -> None:
        raise NotImplementedError

    def state_dict(self) -> dict:
        return {"kind": str(self.kind), "learning_rate": self.learning_rate}

    def load_state(self, state: dict) -> None:
        self.learning_rate = float(state["learning_rate"])


class SGD(Optimizer):
    kind = OptimizerKind.SGD

    def _apply(self, params) -> None:
        for param in params:
            param.value -= self.learning_rate * param.grad


class Adam(Optimizer):
    kind = OptimizerKind.ADAM

    def __init__(
        self, learning_rate: float, betas: tuple[float, float] = ADAM_BETAS, epsilon: float = ADAM_EPSILON
    ) -> None:
        super().__init__(learning_rate)
        self.beta1, self.beta2 = betas
        self.epsilon = epsilon
        self.t = 0
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []

    def _apply(self, params) -> None:
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in params]
            self.v = [np.zeros_like(p.value) for p in params]
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for param, m, v in zip(params, self.m, self.v, strict=True):
            m *= self.beta1
            m += (1.0 - self.beta1) * param.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * param.grad**2
            param.value -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)

    def state_dict(self) -> dict:
        state = super().state_dict()
        state.update(
            {
                "betas": [self.beta1, self.beta2],
                "epsilon": self.epsilon,
                "t": self.t,
                "m": [m.tolist() for m in self.m],
                "v": [v.tolist() for v in self.v],
            }
        )
        return state

    def load_state(self, state: dict) -> None:
        super().load_state(state)
        self.beta1, self.beta2 = state["betas"]
        self.epsilon = float(state["epsilon"])
        self.t = int(state["t"])
        self.m = [np.asarray(m, dtype=np.float64) for m in state["m"]]
        self.v = [np.asarray(v, dtype=np.float64) for v in state["v"]]


def build_optimizer(kind: OptimizerKind | str, learning_rate: float) -> Optimizer:
    kind = OptimizerKind(kind)
    if kind == OptimizerKind.ADAM:
        return Adam(learning_rate)
    return SGD(learning_rate)
