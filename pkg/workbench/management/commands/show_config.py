import json

from django.core.exceptions import ValidationError
from django.utils import timezone

from workbench.config import RunConfig, json_schema
from workbench.management.base import WorkbenchCommand


class Command(WorkbenchCommand):
    help = "Print the resolved run configuration and its hash, or the configuration JSON schema."
    subcommand = "show_config"

    def add_run_arguments(self, parser):
        parser.add_argument("--schema", action="store_true", help="Print the JSON schema instead.")

    def handle(self, *args, **options):
        if options["schema"]:
            self.stdout.write(json.dumps(json_schema(), indent=2, sort_keys=True))
            return
        try:
            config = RunConfig.load(options.get("config"), self.collect_overrides(options))
        except ValidationError as exc:
            self.fail(exc, None, None, None, timezone.now())
        self.stdout.write(json.dumps(config.to_dict(), indent=2, sort_keys=True))
        self.stdout.write(self.style.SUCCESS(f"config_hash {config.config_hash()}"))
