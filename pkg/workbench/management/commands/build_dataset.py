from pathlib import Path

from workbench.management.base import WorkbenchCommand
from workbench.services import DatasetService


class Command(WorkbenchCommand):
    help = "Assemble the labeled detector dataset from normal operation and attack episodes."
    subcommand = "build_dataset"
    flag_overrides = {
        "system": "system",
        "quota": "dataset.quota",
        "attack_episodes": "dataset.attack_episodes",
        "normal_duration": "dataset.normal_duration",
    }

    def add_run_arguments(self, parser):
        parser.add_argument("--system", help="Preset name (MG1, MG2, MG3).")
        parser.add_argument("--from-run", type=Path, help="train_attacker output holding episodes.jsonl.")
        parser.add_argument("--quota", type=int, help="Records per class.")
        parser.add_argument("--attack-episodes", type=int, help="Training episodes per attack source.")
        parser.add_argument("--normal-duration", type=float, help="Seconds of normal operation to crop from.")

    def run(self, config, artifacts, options):
        manifest = DatasetService.build(config, artifacts, from_run=options.get("from_run"))
        for split, per_label in manifest["counts"].items():
            counts = ", ".join(f"{label}:{count}" for label, count in sorted(per_label.items()))
            self.stdout.write(f"{split}: {counts}")
        return f"Dataset written with {manifest['quota']} records per class"
