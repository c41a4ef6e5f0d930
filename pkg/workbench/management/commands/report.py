from pathlib import Path

from workbench.management.base import WorkbenchCommand
from workbench.services import ReportService


class Command(WorkbenchCommand):
    help = "Write plot-ready CSV tables: reward surfaces, load response, attack traces and detector results."
    subcommand = "report"
    flag_overrides = {"system": "system", "channel": "attack.channel", "psw": "attack.switch_power"}

    def add_run_arguments(self, parser):
        parser.add_argument("--system", help="Preset name (MG1, MG2, MG3).")
        parser.add_argument("--channel", help="Attack channel for the oracle traces.")
        parser.add_argument("--psw", type=float, help="Compromised load for the load-switching channel, pu.")
        parser.add_argument("--checkpoint", type=Path, help="Agent checkpoint for a policy rollout.")
        parser.add_argument("--dataset", type=Path, help="build_dataset output directory.")
        parser.add_argument("--classifier", type=Path)
        parser.add_argument("--autoencoder", type=Path)

    def run(self, config, artifacts, options):
        written = ReportService.build(
            config,
            artifacts,
            checkpoint=options.get("checkpoint"),
            dataset_dir=options.get("dataset"),
            classifier_path=options.get("classifier"),
            autoencoder_path=options.get("autoencoder"),
        )
        for name in written:
            self.stdout.write(f"  {name}")
        return f"Report tables written ({len(written)})"
