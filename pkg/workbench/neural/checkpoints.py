"""JSON checkpoints: architecture, flat parameter arrays and optional optimizer state."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError

from ..exceptions import ShapeError
from .network import Network
from .optimizers import Optimizer, build_optimizer

FORMAT_VERSION = 1


def network_to_dict(network: Network, optimizer: Optimizer | None = None) -> dict:
    return {
        "format": FORMAT_VERSION,
        "architecture": network.describe(),
        "parameters": [
            {"name": p.name, "shape": list(p.shape), "values": p.value.ravel().tolist()}
            for p in network.parameters()
        ],
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
    }


def network_from_dict(data: dict) -> tuple[Network, Optimizer | None]:
    """Rebuild a network and check every stored array against its architecture."""
    if data.get("format") != FORMAT_VERSION:
        raise ValidationError({"format": f"Unsupported checkpoint format {data.get('format')!r}."})
    network = Network.from_description(data["architecture"])
    params = network.parameters()
    stored = data["parameters"]
    if len(stored) != len(params):
        raise ShapeError(f"Checkpoint holds {len(stored)} parameter arrays, architecture needs {len(params)}")
    for param, entry in zip(params, stored):
        shape = tuple(entry["shape"])
        if shape != param.shape or entry["name"] != param.name:
            raise ShapeError(
                f"Parameter '{entry['name']}' {shape} does not match '{param.name}' {param.shape}"
            )
        param.assign(np.asarray(entry["values"], dtype=np.float64).reshape(shape))
    optimizer = None
    if data.get("optimizer"):
        state = data["optimizer"]
        optimizer = build_optimizer(state["kind"], state["learning_rate"])
        optimizer.load_state(state)
    return network, optimizer


def save_network(path: Path, network: Network, optimizer: Optimizer | None = None) -> None:
    Path(path).write_text(json.dumps(network_to_dict(network, optimizer), sort_keys=True))


def load_network(path: Path) -> tuple[Network, Optimizer | None]:
    return network_from_dict(json.loads(Path(path).read_text()))
