"""Labeled detector datasets: normal crops, attack episodes, stratified splits, JSON Lines files."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np
from django.core.exceptions import ValidationError

from .choices import RecordLabel, TripClass, TripKind
from .constants import CLASS_QUOTA, CROP_LENGTH_RANGE, RECORD_DT, SPLIT_FRACTIONS, SPLIT_NAMES
from .environment import EpisodeRecord
from .exceptions import DatasetFormatError, WorkbenchError
from .grid import DW_MEAS, PiecewiseConstantSchedule, SystemParams, Trace, simulate, zero_attack
from .loads import LoadProcessConfig, load_inputs, sample_load_trace
from .protection import TripEvent, classify_trip

logger = logging.getLogger(__name__)

DE = 0


@dataclass
class LabeledRecord:
    de: np.ndarray
    dw_meas: np.ndarray
    label: RecordLabel
    provenance: dict = field(default_factory=dict)
    dt: float = RECORD_DT

    def __post_init__(self) -> None:
        self.de = np.asarray(self.de, dtype=np.float64)
        self.dw_meas = np.asarray(self.dw_meas, dtype=np.float64)
        self.label = RecordLabel(int(self.label))

    def clean(self) -> None:
        errors = {}
        if self.de.shape != self.dw_meas.shape or self.de.ndim != 1:
            errors["dw_meas"] = f"Channel lengths differ ({len(self.de)} vs {len(self.dw_meas)})."
        elif len(self.de) < 2:
            errors["de"] = "A record needs at least two samples."
        if errors:
            raise ValidationError(errors)

    def __len__(self) -> int:
        return len(self.de)

    @property
    def X(self) -> np.ndarray:
        """Samples as a (time, 2) array of (de, dw_meas)."""
        return np.stack([self.de, self.dw_meas], axis=1)

    def to_dict(self) -> dict:
        return {
            "label": int(self.label),
            "dt": self.dt,
            "de": self.de.tolist(),
            "dw_meas": self.dw_meas.tolist(),
            "provenance": self.provenance,
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledRecord):
            return NotImplemented
        return (
            self.label == other.label
            and self.dt == other.dt
            and self.provenance == other.provenance
            and np.array_equal(self.de, other.de)
            and np.array_equal(self.dw_meas, other.dw_meas)
        )


@dataclass
class DatasetSplit:
    train: list[LabeledRecord]
    validation: list[LabeledRecord]
    test: list[LabeledRecord]
    fractions: tuple[float, float, float] = SPLIT_FRACTIONS

    def parts(self) -> dict[str, list[LabeledRecord]]:
        return dict(zip(SPLIT_NAMES, (self.train, self.validation, self.test)))

    def counts(self) -> dict[str, dict[int, int]]:
        return {
            name: {int(label): sum(r.label == label for r in records) for label in RecordLabel}
            for name, records in self.parts().items()
        }


def _check_fractions(fractions: Iterable[float]) -> tuple[float, float, float]:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValidationError({"fractions": "Split fractions must be three non-negative numbers summing to 1."})
    return fractions


def record_from_trace(trace: Trace, label: RecordLabel, start: int = 0, stop: int | None = None, **provenance):
    stop = len(trace) if stop is None else stop
    return LabeledRecord(
        de=trace.x[start:stop, DE].copy(),
        dw_meas=trace.x[start:stop, DW_MEAS].copy(),
        label=label,
        provenance={"start_time": float(trace.t[start]), **provenance},
        dt=trace.sample_period,
    )


def crop_normal(
    trace: Trace,
    count: int,
    length_range: tuple[int, int] = CROP_LENGTH_RANGE,
    seed: int = 0,
    source: str = "normal",
) -> list[LabeledRecord]:
    """Cut ``count`` uniformly placed windows with uniform lengths in [lo, hi] samples."""
    lo, hi = length_range
    if count < 0:
        raise ValidationError({"count": "Crop count cannot be negative."})
    if not 2 <= lo <= hi:
        raise ValidationError({"length_range": "Crop lengths need 2 <= lo <= hi."})
    if count and len(trace) < hi:
        raise ValidationError({"duration": f"Trace holds {len(trace)} samples; the longest crop needs {hi}."})
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(count):
        length = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(0, len(trace) - length + 1))
        records.append(record_from_trace(trace, RecordLabel.NORMAL, start, start + length, source=source))
    return records


LABEL_BY_TRIP_CLASS = {
    TripClass.NONE: RecordLabel.ATTACK_NO_TRIP,
    TripClass.UF_OF: RecordLabel.UF_OF_TRIP,
    TripClass.ROCOF: RecordLabel.ROCOF_TRIP,
}


def label_episode(episode: EpisodeRecord, source: str = "attack") -> LabeledRecord:
    """Label an attack episode 2, 3 or 4 from its trip outcome; the record covers the whole episode."""
    meta = episode.metadata
    if meta is None or not meta.channel:
        raise ValidationError({"metadata": "Attack episodes need channel and trip metadata."})
    trace = episode.trace
    if not math.isclose(trace.sample_period, RECORD_DT):
        stride = int(round(RECORD_DT / trace.sample_period))
        trace = trace.downsample(stride)
    event = TripEvent(kind=TripKind(meta.trip_kind), time=meta.trip_time) if meta.trip_kind else None
    label = LABEL_BY_TRIP_CLASS[classify_trip(event)]
    return record_from_trace(
        trace,
        label,
        source=source,
        channel=meta.channel,
        episode=meta.episode,
        seed=meta.seed,
        trip_kind=meta.trip_kind,
        trip_time=meta.trip_time,
    )


def records_from_training(episodes: Iterable[EpisodeRecord], source: str = "attack") -> dict[int, list[LabeledRecord]]:
    """Attack pools keyed by label; each pool is ordered by episode index, earliest first."""
    pools: dict[int, list[LabeledRecord]] = {int(label): [] for label in RecordLabel if label != RecordLabel.NORMAL}
    ordered = sorted(episodes, key=lambda e: (e.metadata.episode is None, e.metadata.episode or 0))
    for episode in ordered:
        if len(episode.trace) < 2:
            continue
        record = label_episode(episode, source)
        pools[int(record.label)].append(record)
    logger.info("attack pools %s", {label: len(pool) for label, pool in pools.items()})
    return pools


def simulate_normal(
    params: SystemParams, load: LoadProcessConfig, duration: float, seed: int, sample_period: float = RECORD_DT
) -> tuple[Trace, PiecewiseConstantSchedule]:
    """Plant response to one sampled load walk, with the walk itself."""
    schedule = sample_load_trace(load, duration, seed)
    trace = simulate(params, load_inputs(schedule), zero_attack(), duration, sample_period=sample_period)
    return trace, schedule


def normal_pool(
    params: SystemParams,
    load: LoadProcessConfig,
    duration: float,
    count: int,
    seed: int,
    length_range: tuple[int, int] = CROP_LENGTH_RANGE,
) -> list[LabeledRecord]:
    load_seed, crop_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(2))
    trace, _ = simulate_normal(params, load, duration, load_seed)
    return crop_normal(trace, count, length_range, crop_seed, source=f"normal:{load_seed}")


def assemble(
    pools: dict[int, list[LabeledRecord]],
    quota: int = CLASS_QUOTA,
    fractions: tuple[float, float, float] = SPLIT_FRACTIONS,
    seed: int = 0,
    ordered_labels: Iterable[int] = (RecordLabel.ATTACK_NO_TRIP,),
) -> DatasetSplit:
    """Take ``quota`` records per class and split each class by the given fractions.

    Pools for ``ordered_labels`` are consumed from the front; the others are
    sampled without replacement.
    """
    fractions = _check_fractions(fractions)
    if quota < 1:
        raise ValidationError({"quota": "Quota must be at least one record per class."})
    ordered_labels = {int(label) for label in ordered_labels}
    rng = np.random.default_rng(seed)
    n_val = int(round(quota * fractions[1]))
    n_test = int(round(quota * fractions[2]))
    n_train = quota - n_val - n_test
    if n_train < 0:
        raise ValidationError({"fractions": "Rounded split sizes exceed the quota."})
    train, validation, test = [], [], []
    for label in RecordLabel:
        pool = pools.get(int(label), [])
        if len(pool) < quota:
            raise WorkbenchError(f"Class {int(label)} has {len(pool)} records, quota is {quota}")
        if int(label) in ordered_labels:
            chosen = list(pool[:quota])
        else:
            chosen = [pool[i] for i in rng.choice(len(pool), size=quota, replace=False)]
        chosen = [chosen[i] for i in rng.permutation(quota)]
        train += chosen[:n_train]
        validation += chosen[n_train : n_train + n_val]
        test += chosen[n_train + n_val :]
    split = DatasetSplit(
        train=[train[i] for i in rng.permutation(len(train))],
        validation=[validation[i] for i in rng.permutation(len(validation))],
        test=[test[i] for i in rng.permutation(len(test))],
        fractions=fractions,
    )
    logger.info("assembled dataset train=%d validation=%d test=%d", len(split.train), len(split.validation), len(split.test))
    return split


def write_records(records: Iterable[LabeledRecord], stream: TextIO) -> None:
    for record in records:
        stream.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def _decode(payload: dict, path: str, line: int) -> LabeledRecord:
    for name in ("label", "dt", "de", "dw_meas"):
        if name not in payload:
            raise DatasetFormatError(path, line, name, "is missing")
    label = payload["label"]
    if not isinstance(label, int) or label not in RecordLabel.values:
        raise DatasetFormatError(path, line, "label", f"must be one of {RecordLabel.values}")
    for name in ("de", "dw_meas"):
        values = payload[name]
        if not isinstance(values, list) or not all(isinstance(v, (int, float)) for v in values):
            raise DatasetFormatError(path, line, name, "must be a list of numbers")
    if len(payload["de"]) != len(payload["dw_meas"]):
        raise DatasetFormatError(path, line, "dw_meas", f"has {len(payload['dw_meas'])} samples, de has {len(payload['de'])}")
    if len(payload["de"]) < 2:
        raise DatasetFormatError(path, line, "de", "needs at least two samples")
    return LabeledRecord(
        de=payload["de"],
        dw_meas=payload["dw_meas"],
        label=label,
        provenance=payload.get("provenance", {}),
        dt=float(payload["dt"]),
    )


def read_records(stream: TextIO, path: str = "<stream>") -> list[LabeledRecord]:
    records = []
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(path, line_no, "<json>", f"is not valid JSON ({exc.msg})") from exc
        if not isinstance(payload, dict):
            raise DatasetFormatError(path, line_no, "<json>", "must be an object")
        records.append(_decode(payload, path, line_no))
    return records


def read_episodes(stream: TextIO, path: str = "<stream>") -> list[EpisodeRecord]:
    """Episodes logged by train_attacker --keep-episodes, one JSON object per line."""
    episodes = []
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(path, line_no, "<json>", f"is not valid JSON ({exc.msg})") from exc
        if not isinstance(payload, dict):
            raise DatasetFormatError(path, line_no, "<json>", "must be an object")
        try:
            episodes.append(EpisodeRecord.from_dict(payload))
        except KeyError as exc:
            raise DatasetFormatError(path, line_no, str(exc.args[0]), "is missing") from exc
        except (TypeError, ValueError) as exc:
            raise DatasetFormatError(path, line_no, "<episode>", f"is malformed ({exc})") from exc
    return episodes


def serialize(split: DatasetSplit, directory: Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, records in split.parts().items():
        path = directory / f"{name}.jsonl"
        with path.open("w") as stream:
            write_records(records, stream)
        paths.append(path)
    return paths


def load(directory: Path, fractions: tuple[float, float, float] = SPLIT_FRACTIONS) -> DatasetSplit:
    directory = Path(directory)
    parts = {}
    for name in SPLIT_NAMES:
        path = directory / f"{name}.jsonl"
        if not path.exists():
            raise ValidationError({"dataset": f"Missing split file {path}."})
        with path.open() as stream:
            parts[name] = read_records(stream, str(path))
    return DatasetSplit(fractions=fractions, **parts)


def dataset_manifest(split: DatasetSplit, quota: int, seeds: dict, sources: list[str]) -> dict:
    return {
        "quota": quota,
        "fractions": list(split.fractions),
        "seeds": seeds,
        "sources": sources,
        "counts": {name: {str(k): v for k, v in per.items()} for name, per in split.counts().items()},
    }
