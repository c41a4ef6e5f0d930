"""Common plumbing for workbench management commands."""
from __future__ import annotations

import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError
from django.utils import timezone

from workbench.config import RunConfig
from workbench.exceptions import AcceptanceError, WorkbenchError
from workbench.services import ArtifactService, RegistryService

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_ACCEPTANCE = 4


def error_document(exc: Exception) -> dict:
    """Machine-readable description of a failed run."""
    if isinstance(exc, ValidationError):
        code = EXIT_CONFIG
        fields = exc.message_dict if hasattr(exc, "error_dict") else {"__all__": exc.messages}
        message = "; ".join(f"{name}: {' '.join(msgs)}" for name, msgs in sorted(fields.items()))
        return {"error": "ValidationError", "message": message, "fields": fields, "exit_code": code}
    if isinstance(exc, AcceptanceError):
        return {"error": "AcceptanceError", "message": str(exc), "failures": exc.failures, "exit_code": EXIT_ACCEPTANCE}
    document = {"error": type(exc).__name__, "message": str(exc), "exit_code": EXIT_RUNTIME}
    context = getattr(exc, "context", None)
    if context:
        document["context"] = {key: str(value) for key, value in context.items()}
    return document


class WorkbenchCommand(BaseCommand):
    """Resolves the run configuration and output directory, then maps failures to exit codes.

    Subclasses set ``subcommand`` and ``flag_overrides`` (option name to
    ``section.field``) and implement ``run``.
    """

    subcommand = ""
    flag_overrides: dict[str, str] = {}

    def add_arguments(self, parser):
        parser.add_argument("--config", type=Path, help="Run configuration JSON file.")
        parser.add_argument("--seed", type=int, help="Base seed; overrides seeds.base.")
        parser.add_argument("--out", type=Path, help="Output directory for this run's artifacts.")
        parser.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.FIELD=VALUE",
            help="Override one configuration field; the value is parsed as JSON.",
        )
        self.add_run_arguments(parser)

    def add_run_arguments(self, parser):
        pass

    def collect_overrides(self, options: dict) -> list[str]:
        overrides = list(options.get("overrides") or [])
        if options.get("seed") is not None:
            overrides.append(f"seeds.base={options['seed']}")
        for option, target in self.flag_overrides.items():
            value = options.get(option)
            if value is not None:
                overrides.append(f"{target}={json.dumps(value)}")
        return overrides

    def output_dir(self, config: RunConfig, options: dict) -> Path:
        if options.get("out") is not None:
            return Path(options["out"])
        if config.output_dir:
            return Path(config.output_dir)
        return Path(settings.WORKBENCH_OUTPUT_ROOT) / self.subcommand

    def run(self, config: RunConfig, artifacts: ArtifactService, options: dict) -> str:
        """Do the work; the returned line is printed on success."""
        raise NotImplementedError

    def handle(self, *args, **options):
        started_at = timezone.now()
        config, out_dir, artifacts = None, None, None
        try:
            config = RunConfig.load(options.get("config"), self.collect_overrides(options))
            out_dir = self.output_dir(config, options)
            artifacts = ArtifactService(out_dir, self.subcommand, config, started_at=started_at)
            logger.info("run subcommand=%s config_hash=%s out=%s", self.subcommand, config.config_hash()[:12], out_dir)
            summary = self.run(config, artifacts, options)
            manifest = artifacts.finish()
        except (ValidationError, WorkbenchError) as exc:
            self.fail(exc, config, out_dir, artifacts, started_at)
        except Exception as exc:
            logger.exception("unexpected failure subcommand=%s", self.subcommand)
            self.fail(exc, config, out_dir, artifacts, started_at)
        RegistryService.record_run(self.subcommand, config, out_dir, 0, manifest["artifacts"], started_at)
        self.stdout.write(self.style.SUCCESS(summary))
        self.stdout.write(f"Artifacts in {out_dir} ({len(manifest['artifacts'])} files)")

    def fail(self, exc, config, out_dir, artifacts, started_at):
        document = error_document(exc)
        logger.error("run failed subcommand=%s error=%s message=%s", self.subcommand, document["error"], document["message"])
        payload = json.dumps(document, sort_keys=True)
        self.stderr.write(payload)
        if out_dir is not None and Path(out_dir).is_dir():
            (Path(out_dir) / "error.json").write_text(payload + "\n")
        entries = list(artifacts.artifacts.values()) if artifacts is not None else []
        RegistryService.record_run(self.subcommand, config, out_dir, document["exit_code"], entries, started_at)
        raise CommandError(document["message"], returncode=document["exit_code"]) from exc
