from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from ..exceptions import NumericalError, ShapeError, StaleCacheError
from .layers import Context, Layer, Param, layer_from_spec


@dataclass
class ForwardCache:
    version: int
    until: int
    main: list
    branch: list


class Network:
    """Ordered layers with an optional second input branch.

    When ``branch`` is given, its output is added elementwise to the main
    path's activation after the first ``merge_at`` layers (the critic
    topology). ``version`` increases with every parameter update and is used
    to reject caches computed before it.
    """

    def __init__(self, layers: list[Layer], branch: list[Layer] | None = None, merge_at: int | None = None) -> None:
        if not layers:
            raise ValidationError({"architecture": "A network needs at least one layer."})
        if (branch is None) != (merge_at is None):
            raise ValidationError({"architecture": "A branch needs a merge point and vice versa."})
        if merge_at is not None and not 0 < merge_at <= len(layers):
            raise ValidationError({"architecture": f"Merge point {merge_at} is outside the main path."})
        self.layers = list(layers)
        self.branch = list(branch) if branch is not None else None
        self.merge_at = merge_at
        self.version = 0

    def parameters(self) -> list[Param]:
        params = [p for layer in self.layers for p in layer.params()]
        if self.branch is not None:
            params += [p for layer in self.branch for p in layer.params()]
        return params

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def bump_version(self) -> None:
        self.version += 1

    def forward(
        self,
        x: np.ndarray,
        branch_input: np.ndarray | None = None,
        training: bool = False,
        seed: int | np.random.Generator | None = None,
        mask: np.ndarray | None = None,
        until: int | None = None,
    ) -> tuple[np.ndarray, ForwardCache]:
        """Run the first ``until`` main layers (all by default); returns output and cache."""
        until = len(self.layers) if until is None else until
        if self.branch is not None and branch_input is None:
            raise ShapeError("This network takes a second (branch) input")
        if self.merge_at is not None and until < self.merge_at:
            raise ValidationError({"until": "Cannot stop before the merge point."})
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        ctx = Context(training=training, rng=rng, mask=mask)
        y = np.asarray(x, dtype=np.float64)
        main_caches, branch_caches = [], []
        for index, layer in enumerate(self.layers[:until]):
            if index == self.merge_at:
                b = np.asarray(branch_input, dtype=np.float64)
                for branch_layer in self.branch:
                    b, cache = branch_layer.forward(b, ctx)
                    branch_caches.append(cache)
                if b.shape != y.shape:
                    raise ShapeError(f"Branch output {b.shape} cannot be added to {y.shape}")
                y = y + b
            y, cache = layer.forward(y, ctx)
            main_caches.append(cache)
        if self.merge_at == until:
            b = np.asarray(branch_input, dtype=np.float64)
            for branch_layer in self.branch:
                b, cache = branch_layer.forward(b, ctx)
                branch_caches.append(cache)
            y = y + b
        if not np.all(np.isfinite(y)):
            raise NumericalError("Non-finite network output", version=self.version)
        return y, ForwardCache(version=self.version, until=until, main=main_caches, branch=branch_caches)

    def backward(self, cache: ForwardCache, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """Accumulate parameter gradients; returns gradients w.r.t. the main and branch inputs."""
        if cache.version != self.version:
            raise StaleCacheError(
                f"Cache from parameter version {cache.version}, network is at version {self.version}"
            )
        d = np.asarray(dy, dtype=np.float64)
        d_branch = None
        for index in reversed(range(cache.until)):
            d = self.layers[index].backward(cache.main[index], d)
            if index == self.merge_at:
                d_branch = self._branch_backward(cache, d)
        if self.merge_at == cache.until:
            d_branch = self._branch_backward(cache, np.asarray(dy, dtype=np.float64))
        return d, d_branch

    def _branch_backward(self, cache: ForwardCache, d: np.ndarray) -> np.ndarray:
        for layer, layer_cache in zip(reversed(self.branch), reversed(cache.branch)):
            d = layer.backward(layer_cache, d)
        return d

    def predict(self, x: np.ndarray, branch_input: np.ndarray | None = None, mask: np.ndarray | None = None):
        return self.forward(x, branch_input=branch_input, training=False, mask=mask)[0]

    def describe(self) -> dict:
        return {
            "layers": [layer.spec() for layer in self.layers],
            "branch": [layer.spec() for layer in self.branch] if self.branch is not None else None,
            "merge_at": self.merge_at,
        }

    @classmethod
    def from_description(cls, description: dict) -> "Network":
        branch = description.get("branch")
        return cls(
            [layer_from_spec(spec) for spec in description["layers"]],
            branch=[layer_from_spec(spec) for spec in branch] if branch is not None else None,
            merge_at=description.get("merge_at"),
        )

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def load_values(self, other: "Network") -> None:
        for mine, theirs in zip(self.parameters(), other.parameters(), strict=True):
            mine.assign(theirs.value)
        self.bump_version()
