"""Enumerations shared across the workbench."""
from __future__ import annotations

from django.db import models


class AttackChannel(models.TextChoices):
    FREQ_MEASUREMENT = "freq", "Frequency measurement bias (p1)"
    GEN_CONTROL = "gen", "Generation control bias (p2)"
    TIE_LINE = "tie", "Tie-line measurement bias (p3)"
    LOAD_SWITCH = "load", "Load switching (p4)"

    @property
    def index(self) -> int:
        """Column of the attack vector driven by this channel."""
        return list(type(self)).index(self)


class TripKind(models.TextChoices):
    UF = "UF", "Under-frequency"
    OF = "OF", "Over-frequency"
    ROCOF = "ROCOF", "Rate of change of frequency"


class TripClass(models.TextChoices):
    NONE = "none", "No trip"
    UF_OF = "uf_of", "Under/over-frequency trip"
    ROCOF = "rocof", "ROCOF trip"


class RecordLabel(models.IntegerChoices):
    NORMAL = 1, "Normal operation"
    ATTACK_NO_TRIP = 2, "Attack without trip"
    UF_OF_TRIP = 3, "Attack tripping UF/OF"
    ROCOF_TRIP = 4, "Attack tripping ROCOF"


class TerminationMode(models.TextChoices):
    SAFE_SET = "safe-set", "Leave the safe set"
    TIMED_RELAY = "timed-relay", "Timed relay trip"
    SUPPRESSED = "suppressed", "Record trips, run to the episode limit"


class RewardKind(models.TextChoices):
    FDI = "fdi", "False data injection"
    SWITCH = "switch", "Load switching"


class Waveform(models.TextChoices):
    SINE = "sine", "Sine"
    SQUARE = "square", "Square"


class OutputActivation(models.TextChoices):
    TANH = "tanh", "Tanh"
    SIGMOID = "sigmoid", "Sigmoid"


class ThresholdPolicy(models.TextChoices):
    MAX_FACTOR = "max-factor", "Validation maximum times a safety factor"
    FIXED = "fixed", "Fixed value"


class OptimizerKind(models.TextChoices):
    SGD = "sgd", "Stochastic gradient descent"
    ADAM = "adam", "Adam"
