"""Data models for the optional run registry."""
from __future__ import annotations

from django.core.validators import MinValueValidator
from django.db import models
from django.utils import timezone


class ExperimentRun(models.Model):
    """One invocation of a workbench management command."""

    class Status(models.TextChoices):
        RUNNING = "running", "Running"
        SUCCEEDED = "succeeded", "Succeeded"
        FAILED = "failed", "Failed"

    subcommand = models.CharField(max_length=40)
    config_hash = models.CharField(max_length=64)
    base_seed = models.BigIntegerField(default=0)
    output_dir = models.CharField(max_length=500)
    status = models.CharField(
        max_length=16,
        choices=Status.choices,
        default=Status.RUNNING,
    )
    exit_code = models.PositiveSmallIntegerField(default=0)
    started_at = models.DateTimeField(default=timezone.now)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ["-started_at"]
        verbose_name = "Experiment run"
        verbose_name_plural = "Experiment runs"
        indexes = [models.Index(fields=["subcommand", "config_hash"], name="run_subcommand_hash_idx")]

    def __str__(self) -> str:
        return f"{self.subcommand} {self.config_hash[:12]} ({self.get_status_display()})"

    @property
    def duration(self):
        if self.finished_at is None:
            return None
        return self.finished_at - self.started_at


class RunArtifact(models.Model):
    """A file written by a run, with its content digest."""

    run = models.ForeignKey(
        ExperimentRun,
        on_delete=models.CASCADE,
        related_name="artifacts",
    )
    path = models.CharField(max_length=500)
    sha256 = models.CharField(max_length=64)
    size = models.BigIntegerField(validators=[MinValueValidator(0)])

    class Meta:
        ordering = ["run", "path"]
        constraints = [
            models.UniqueConstraint(fields=["run", "path"], name="unique_artifact_path_per_run"),
        ]

    def __str__(self) -> str:
        return f"{self.path} ({self.sha256[:12]})"
