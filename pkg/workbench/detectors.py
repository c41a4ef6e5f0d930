"""Supervised LSTM attack classifier, BiLSTM autoencoder anomaly detector and their combination."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np
from django.core.exceptions import ValidationError

from .choices import RecordLabel, ThresholdPolicy, TripClass
from .constants import (
    ACCEPTANCE_FLOORS,
    AUTOENCODER_WIDTHS,
    CLASSIFIER_LAYERS,
    DETECTOR_CHANNEL_SCALES,
    DETECTOR_DEFAULTS,
)
from .datasets import LabeledRecord
from .exceptions import AcceptanceError, DetectorNotReadyError
from .neural import (
    LSTM,
    Adam,
    BiLSTM,
    Dense,
    Dropout,
    FixedAffine,
    Network,
    ReLU,
    Softmax,
    TimeDistributedDense,
    mse_loss,
    network_from_dict,
    network_to_dict,
    softmax_cross_entropy,
)

logger = logging.getLogger(__name__)

N_CLASSES = len(RecordLabel)
_INPUT_SCALE = 1.0 / np.asarray(DETECTOR_CHANNEL_SCALES)


@dataclass(frozen=True)
class DetectorConfig:
    learning_rate: float = DETECTOR_DEFAULTS["learning_rate"]
    batch_size: int = DETECTOR_DEFAULTS["batch_size"]
    max_epochs: int = DETECTOR_DEFAULTS["max_epochs"]
    patience: int = DETECTOR_DEFAULTS["patience"]
    threshold_policy: str = DETECTOR_DEFAULTS["threshold_policy"]
    threshold_factor: float = DETECTOR_DEFAULTS["threshold_factor"]
    threshold_value: float = DETECTOR_DEFAULTS["threshold_value"]
    classifier_layers: tuple = CLASSIFIER_LAYERS
    autoencoder_widths: tuple = AUTOENCODER_WIDTHS

    def clean(self) -> None:
        errors = {}
        if not self.learning_rate > 0:
            errors["learning_rate"] = "Learning rate must be positive."
        if self.batch_size < 1:
            errors["batch_size"] = "Batch size must be at least 1."
        if self.max_epochs < 1:
            errors["max_epochs"] = "Train for at least one epoch."
        if self.patience < 1:
            errors["patience"] = "Patience must be at least one epoch."
        if self.threshold_policy not in ThresholdPolicy.values:
            errors["threshold_policy"] = f"Choose one of {', '.join(ThresholdPolicy.values)}."
        if not self.threshold_factor > 0:
            errors["threshold_factor"] = "Safety factor must be positive."
        if not self.threshold_value > 0:
            errors["threshold_value"] = "Fixed threshold must be positive."
        if len(self.autoencoder_widths) != 3:
            errors["autoencoder_widths"] = "The autoencoder has three BiLSTM widths."
        if errors:
            raise ValidationError(errors)

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorConfig":
        allowed = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(allowed)
        if unknown:
            raise ValidationError({"detector": f"Unknown detector settings: {', '.join(sorted(unknown))}."})
        values = {}
        for key, value in data.items():
            if key == "classifier_layers":
                values[key] = tuple((int(units), float(rate)) for units, rate in value)
            elif key == "autoencoder_widths":
                values[key] = tuple(int(width) for width in value)
            elif key == "threshold_policy":
                values[key] = str(value)
            elif isinstance(allowed[key].default, int):
                values[key] = int(value)
            else:
                values[key] = float(value)
        return cls(**values)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["classifier_layers"] = [list(layer) for layer in self.classifier_layers]
        data["autoencoder_widths"] = list(self.autoencoder_widths)
        return data


def pad_batch(records: Sequence[LabeledRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Stack records into (batch, time, 2) with zero padding and a (batch, time) validity mask."""
    steps = max(len(r) for r in records)
    X = np.zeros((len(records), steps, 2))
    mask = np.zeros((len(records), steps))
    for row, record in enumerate(records):
        X[row, : len(record)] = record.X
        mask[row, : len(record)] = 1.0
    return X, mask


def length_buckets(records: Sequence[LabeledRecord], batch_size: int, rng: np.random.Generator | None) -> list[list[int]]:
    """Mini-batches of similar-length records; batch order shuffled when a generator is given."""
    jitter = rng.random(len(records)) if rng is not None else np.zeros(len(records))
    order = np.lexsort((jitter, [len(r) for r in records]))
    batches = [order[i : i + batch_size].tolist() for i in range(0, len(order), batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def _require_records(records: Sequence[LabeledRecord], name: str) -> None:
    if not records:
        raise ValidationError({name: "The split is empty."})
    for record in records:
        if len(record) < 2:
            raise ValidationError({name: "Records need at least two samples."})


@dataclass
class ClassifierModel:
    network: Network
    config: DetectorConfig = field(default_factory=DetectorConfig)
    history: list[dict] = field(default_factory=list)

    def logits(self, X: np.ndarray, mask: np.ndarray, training: bool = False, seed=None):
        return self.network.forward(X, training=training, seed=seed, mask=mask, until=len(self.network.layers) - 1)


def build_classifier(config: DetectorConfig, rng: np.random.Generator) -> Network:
    layers = [FixedAffine(_INPUT_SCALE)]
    n_in = 2
    for position, (units, rate) in enumerate(config.classifier_layers):
        last = position == len(config.classifier_layers) - 1
        layers += [LSTM(n_in, units, return_sequences=not last, rng=rng), Dropout(rate)]
        n_in = units
    layers += [Dense(n_in, N_CLASSES, rng), Softmax()]
    return Network(layers)


def build_autoencoder(config: DetectorConfig, rng: np.random.Generator) -> Network:
    layers = [FixedAffine(_INPUT_SCALE)]
    n_in = 2
    for width in config.autoencoder_widths:
        layers += [BiLSTM(n_in, width, return_sequences=True, rng=rng), ReLU()]
        n_in = 2 * width
    layers.append(TimeDistributedDense(n_in, 2, rng))
    return Network(layers)


class _EarlyStopping:
    def __init__(self, network: Network, patience: int) -> None:
        self.network = network
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.best = network.copy()
        self.waited = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record an epoch's validation loss; True when training should stop."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.best = self.network.copy()
            self.waited = 0
            return False
        self.waited += 1
        return self.waited >= self.patience

    def restore(self) -> None:
        self.network.load_values(self.best)


def _classifier_loss(model: ClassifierModel, records: Sequence[LabeledRecord], batch_size: int) -> float:
    total = 0.0
    for batch in length_buckets(records, batch_size, None):
        X, mask = pad_batch([records[i] for i in batch])
        logits, _ = model.logits(X, mask)
        loss, _ = softmax_cross_entropy(logits, [int(records[i].label) - 1 for i in batch])
        total += loss * len(batch)
    return total / len(records)


def train_classifier(
    train: Sequence[LabeledRecord],
    validation: Sequence[LabeledRecord],
    config: DetectorConfig = DetectorConfig(),
    seed: int = 0,
) -> ClassifierModel:
    """Cross-entropy training with Adam and early stopping on validation loss."""
    config.clean()
    _require_records(train, "train")
    _require_records(validation, "validation")
    init_seed, batch_seed, dropout_seed = np.random.SeedSequence(seed).spawn(3)
    model = ClassifierModel(build_classifier(config, np.random.default_rng(init_seed)), config)
    optimizer = Adam(config.learning_rate)
    batch_rng = np.random.default_rng(batch_seed)
    dropout_rng = np.random.default_rng(dropout_seed)
    stopper = _EarlyStopping(model.network, config.patience)
    for epoch in range(1, config.max_epochs + 1):
        total = 0.0
        for batch in length_buckets(train, config.batch_size, batch_rng):
            X, mask = pad_batch([train[i] for i in batch])
            logits, cache = model.logits(X, mask, training=True, seed=dropout_rng)
            loss, grad = softmax_cross_entropy(logits, [int(train[i].label) - 1 for i in batch])
            model.network.zero_grad()
            model.network.backward(cache, grad)
            optimizer.step(model.network)
            total += loss * len(batch)
        val_loss = _classifier_loss(model, validation, config.batch_size)
        model.history.append({"epoch": epoch, "train_loss": total / len(train), "val_loss": val_loss})
        logger.info("classifier epoch=%d train_loss=%.5f val_loss=%.5f", epoch, total / len(train), val_loss)
        if stopper.update(epoch, val_loss):
            break
    stopper.restore()
    model.history.append({"selected_epoch": stopper.best_epoch, "val_loss": stopper.best_loss})
    return model


def classify(model: ClassifierModel, record: LabeledRecord) -> tuple[np.ndarray, RecordLabel]:
    """Class probabilities for labels 1..4 and the most likely label (lowest label on ties)."""
    if len(record) < 2:
        raise ValidationError({"record": "Records need at least two samples."})
    probs = model.network.predict(record.X[None], mask=np.ones((1, len(record))))[0]
    return probs, RecordLabel(int(np.argmax(probs)) + 1)


def classify_many(model: ClassifierModel, records: Sequence[LabeledRecord], batch_size: int = 64) -> list[RecordLabel]:
    labels: list[RecordLabel | None] = [None] * len(records)
    for batch in length_buckets(records, batch_size, None):
        X, mask = pad_batch([records[i] for i in batch])
        probs = model.network.predict(X, mask=mask)
        for i, row in zip(batch, probs):
            labels[i] = RecordLabel(int(np.argmax(row)) + 1)
    return labels


@dataclass
class AutoencoderModel:
    network: Network
    config: DetectorConfig = field(default_factory=DetectorConfig)
    threshold: float | None = None
    history: list[dict] = field(default_factory=list)


def _reconstruction_loss(network: Network, records: Sequence[LabeledRecord], batch_size: int) -> float:
    total, count = 0.0, 0
    for batch in length_buckets(records, batch_size, None):
        X, mask = pad_batch([records[i] for i in batch])
        recon = network.predict(X, mask=mask)
        loss, _ = mse_loss(recon, X * _INPUT_SCALE, mask)
        weight = mask.sum()
        total += loss * weight
        count += weight
    return total / count


def train_autoencoder(
    train: Sequence[LabeledRecord],
    validation: Sequence[LabeledRecord],
    config: DetectorConfig = DetectorConfig(),
    seed: int = 0,
) -> AutoencoderModel:
    """Fit the reconstruction network on normal records only; the threshold is left unset."""
    config.clean()
    _require_records(train, "train")
    _require_records(validation, "validation")
    for name, records in (("train", train), ("validation", validation)):
        if any(r.label != RecordLabel.NORMAL for r in records):
            raise ValidationError({name: "The autoencoder trains on normal records only."})
    init_seed, batch_seed = np.random.SeedSequence(seed).spawn(2)
    model = AutoencoderModel(build_autoencoder(config, np.random.default_rng(init_seed)), config)
    optimizer = Adam(config.learning_rate)
    batch_rng = np.random.default_rng(batch_seed)
    stopper = _EarlyStopping(model.network, config.patience)
    for epoch in range(1, config.max_epochs + 1):
        total, count = 0.0, 0.0
        for batch in length_buckets(train, config.batch_size, batch_rng):
            X, mask = pad_batch([train[i] for i in batch])
            recon, cache = model.network.forward(X, training=True, mask=mask)
            loss, grad = mse_loss(recon, X * _INPUT_SCALE, mask)
            model.network.zero_grad()
            model.network.backward(cache, grad)
            optimizer.step(model.network)
            total += loss * mask.sum()
            count += mask.sum()
        val_loss = _reconstruction_loss(model.network, validation, config.batch_size)
        model.history.append({"epoch": epoch, "train_loss": total / count, "val_loss": val_loss})
        logger.info("autoencoder epoch=%d train_loss=%.6f val_loss=%.6f", epoch, total / count, val_loss)
        if stopper.update(epoch, val_loss):
            break
    stopper.restore()
    model.history.append({"selected_epoch": stopper.best_epoch, "val_loss": stopper.best_loss})
    return model


def reconstruct(model: AutoencoderModel, record: LabeledRecord) -> np.ndarray:
    """Reconstruction of one record in raw (per-unit) channel units, shape (time, 2)."""
    recon = model.network.predict(record.X[None], mask=np.ones((1, len(record))))[0]
    return recon / _INPUT_SCALE


def reconstruction_errors(
    model: AutoencoderModel, records: Sequence[LabeledRecord], batch_size: int = 64
) -> np.ndarray:
    """Per-record mean absolute reconstruction error over all valid elements, in scaled units."""
    errors = np.zeros(len(records))
    for batch in length_buckets(records, batch_size, None):
        X, mask = pad_batch([records[i] for i in batch])
        recon = model.network.predict(X, mask=mask)
        absolute = np.abs(recon - X * _INPUT_SCALE).sum(axis=2) * mask
        errors[batch] = absolute.sum(axis=1) / (2.0 * mask.sum(axis=1))
    return errors


def select_threshold(
    errors: Iterable[float],
    policy: str = ThresholdPolicy.MAX_FACTOR,
    factor: float = DETECTOR_DEFAULTS["threshold_factor"],
    value: float = DETECTOR_DEFAULTS["threshold_value"],
) -> float:
    errors = np.asarray(list(errors), dtype=np.float64)
    if errors.size == 0:
        raise ValidationError({"validation": "Threshold selection needs at least one validation error."})
    if ThresholdPolicy(policy) == ThresholdPolicy.FIXED:
        return float(value)
    return float(errors.max() * factor)


def detect_anomaly(model: AutoencoderModel, record: LabeledRecord) -> tuple[bool, float]:
    """(anomalous, MAE); anomalous only when the error is strictly above the threshold."""
    if model.threshold is None:
        raise DetectorNotReadyError("The autoencoder threshold has not been selected.")
    mae = float(reconstruction_errors(model, [record])[0])
    return mae > model.threshold, mae


@dataclass(frozen=True)
class Decision:
    accepted: bool
    alert: TripClass | None
    mae: float
    classifier_label: RecordLabel | None = None


ALERT_BY_LABEL = {
    RecordLabel.UF_OF_TRIP: TripClass.UF_OF,
    RecordLabel.ROCOF_TRIP: TripClass.ROCOF,
}


def integrated_detect(autoencoder: AutoencoderModel, classifier: ClassifierModel, record: LabeledRecord) -> Decision:
    """Screen with the autoencoder; only anomalous records reach the classifier."""
    anomalous, mae = detect_anomaly(autoencoder, record)
    if not anomalous:
        return Decision(accepted=True, alert=None, mae=mae)
    _, label = classify(classifier, record)
    alert = ALERT_BY_LABEL.get(label)
    return Decision(accepted=alert is None, alert=alert, mae=mae, classifier_label=label)


class ConfusionMatrix:
    """Counts indexed [true label - 1, predicted label - 1]."""

    def __init__(self, counts: np.ndarray | None = None) -> None:
        self.counts = np.zeros((N_CLASSES, N_CLASSES), dtype=int) if counts is None else np.asarray(counts, dtype=int)

    @classmethod
    def from_labels(cls, true: Iterable[int], predicted: Iterable[int]) -> "ConfusionMatrix":
        matrix = cls()
        for t, p in zip(true, predicted, strict=True):
            matrix.counts[int(t) - 1, int(p) - 1] += 1
        return matrix

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def _collapsed_accuracy(self, positive: set[int]) -> float:
        if not self.total:
            return 0.0
        hits = sum(
            self.counts[t - 1, p - 1]
            for t in range(1, N_CLASSES + 1)
            for p in range(1, N_CLASSES + 1)
            if (t in positive) == (p in positive)
        )
        return float(hits / self.total)

    @property
    def binary_accuracy(self) -> float:
        """Normal (label 1) against every attack label."""
        return self._collapsed_accuracy({2, 3, 4})

    @property
    def trip_accuracy(self) -> float:
        """Trips (labels 3, 4) against no trip (labels 1, 2)."""
        return self._collapsed_accuracy({3, 4})

    def precision(self) -> dict[int, float | None]:
        column = self.counts.sum(axis=0)
        return {k + 1: (float(self.counts[k, k] / column[k]) if column[k] else None) for k in range(N_CLASSES)}

    def recall(self) -> dict[int, float | None]:
        row = self.counts.sum(axis=1)
        return {k + 1: (float(self.counts[k, k] / row[k]) if row[k] else None) for k in range(N_CLASSES)}

    def to_dict(self) -> dict:
        return {
            "counts": self.counts.tolist(),
            "accuracy": self.accuracy,
            "binary_accuracy": self.binary_accuracy,
            "trip_accuracy": self.trip_accuracy,
            "precision": {str(k): v for k, v in self.precision().items()},
            "recall": {str(k): v for k, v in self.recall().items()},
        }

    def write_csv(self, stream: TextIO) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["true"] + [f"pred_{k}" for k in range(1, N_CLASSES + 1)])
        for k, row in enumerate(self.counts, start=1):
            writer.writerow([k] + row.tolist())


def _binary_accuracy(predicted: Sequence[bool], actual: Sequence[bool]) -> float:
    return float(np.mean(np.asarray(predicted) == np.asarray(actual)))


def evaluate(
    classifier: ClassifierModel | None, autoencoder: AutoencoderModel | None, test: Sequence[LabeledRecord]
) -> dict:
    """Classifier, autoencoder and pipeline metrics on a test split; either model may be absent."""
    _require_records(test, "test")
    true = [int(r.label) for r in test]
    is_attack = [t != RecordLabel.NORMAL for t in true]
    is_trip = [t in (RecordLabel.UF_OF_TRIP, RecordLabel.ROCOF_TRIP) for t in true]
    report: dict = {"records": len(test)}
    predicted = None
    if classifier is not None:
        predicted = [int(label) for label in classify_many(classifier, test)]
        matrix = ConfusionMatrix.from_labels(true, predicted)
        report["classifier"] = matrix.to_dict()
    if autoencoder is not None:
        if autoencoder.threshold is None:
            raise DetectorNotReadyError("The autoencoder threshold has not been selected.")
        errors = reconstruction_errors(autoencoder, test)
        anomalous = [bool(e > autoencoder.threshold) for e in errors]
        report["autoencoder"] = {
            "threshold": autoencoder.threshold,
            "binary_accuracy": _binary_accuracy(anomalous, is_attack),
            "trip_accuracy": _binary_accuracy(anomalous, is_trip),
            "false_alarms": int(sum(a and not attack for a, attack in zip(anomalous, is_attack))),
        }
        if predicted is not None:
            alerts = [a and p in (RecordLabel.UF_OF_TRIP, RecordLabel.ROCOF_TRIP) for a, p in zip(anomalous, predicted)]
            report["integrated"] = {
                "trip_accuracy": _binary_accuracy(alerts, is_trip),
                "false_alarms": int(sum(a and t == RecordLabel.NORMAL for a, t in zip(alerts, true))),
            }
    return report


def check_acceptance(report: dict, floors: dict = ACCEPTANCE_FLOORS) -> None:
    """Raise AcceptanceError listing every metric below its floor."""
    failures = {}
    classifier = report.get("classifier")
    autoencoder = report.get("autoencoder")
    integrated = report.get("integrated")
    if classifier is None or autoencoder is None or integrated is None:
        raise AcceptanceError({"report": "Acceptance needs classifier, autoencoder and integrated metrics."})
    checks = {
        "classifier_accuracy": classifier["accuracy"],
        "classifier_binary_accuracy": classifier["binary_accuracy"],
        "autoencoder_binary_accuracy": autoencoder["binary_accuracy"],
        "class2_recall": classifier["recall"][str(int(RecordLabel.ATTACK_NO_TRIP))] or 0.0,
    }
    for name, value in checks.items():
        if value < floors[name]:
            failures[name] = f"{value:.4f} < {floors[name]}"
    margin = classifier["trip_accuracy"] - autoencoder["trip_accuracy"]
    if margin < floors["trip_accuracy_margin"]:
        failures["trip_accuracy_margin"] = f"{margin:.4f} < {floors['trip_accuracy_margin']}"
    gap = abs(integrated["trip_accuracy"] - classifier["trip_accuracy"])
    if gap > floors["integrated_trip_accuracy_gap"]:
        failures["integrated_trip_accuracy_gap"] = f"{gap:.4f} > {floors['integrated_trip_accuracy_gap']}"
    if integrated["false_alarms"] > autoencoder["false_alarms"]:
        failures["integrated_false_alarms"] = f"{integrated['false_alarms']} > {autoencoder['false_alarms']}"
    if failures:
        raise AcceptanceError(failures)


def write_mae_histogram(errors: np.ndarray, labels: Sequence[int], stream: TextIO, bins: int = 50) -> None:
    """Per-label counts of reconstruction MAE over shared bins."""
    errors = np.asarray(errors, dtype=np.float64)
    labels = np.asarray([int(label) for label in labels])
    edges = np.histogram_bin_edges(errors, bins=bins)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["bin_lo", "bin_hi"] + [f"label_{k}" for k in range(1, N_CLASSES + 1)])
    counts = [np.histogram(errors[labels == k], bins=edges)[0] for k in range(1, N_CLASSES + 1)]
    for i in range(len(edges) - 1):
        writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1]))] + [int(c[i]) for c in counts])


def write_reconstruction_csv(model: AutoencoderModel, record: LabeledRecord, stream: TextIO) -> None:
    recon = reconstruct(model, record)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["t", "de", "dw_meas", "de_hat", "dw_meas_hat"])
    for n in range(len(record)):
        writer.writerow(
            [repr(round(n * record.dt, 10)), repr(float(record.de[n])), repr(float(record.dw_meas[n]))]
            + [repr(float(v)) for v in recon[n]]
        )


def save_detector(path: Path, model: ClassifierModel | AutoencoderModel) -> None:
    kind = "classifier" if isinstance(model, ClassifierModel) else "autoencoder"
    payload = {
        "kind": kind,
        "detector": model.config.to_dict(),
        "network": network_to_dict(model.network),
        "history": model.history,
        "threshold": getattr(model, "threshold", None),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_detector(path: Path) -> ClassifierModel | AutoencoderModel:
    try:
        payload = json.loads(Path(path).read_text())
        network, _ = network_from_dict(payload["network"])
        config = DetectorConfig.from_dict(payload["detector"])
        kind = payload["kind"]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ValidationError({"checkpoint": f"{path} is not a detector checkpoint: {exc}"}) from exc
    if kind == "classifier":
        return ClassifierModel(network=network, config=config, history=payload.get("history", []))
    if kind == "autoencoder":
        return AutoencoderModel(
            network=network, config=config, threshold=payload.get("threshold"), history=payload.get("history", [])
        )
    raise ValidationError({"checkpoint": f"Unknown detector kind '{kind}'."})
