from pathlib import Path

from workbench.management.base import WorkbenchCommand
from workbench.services import DetectorService


class Command(WorkbenchCommand):
    help = "Evaluate trained detectors and the integrated pipeline on the test split."
    subcommand = "evaluate"

    def add_run_arguments(self, parser):
        parser.add_argument("--dataset", type=Path, required=True, help="build_dataset output directory.")
        parser.add_argument("--classifier", type=Path, help="classifier.json from train_detector.")
        parser.add_argument("--autoencoder", type=Path, help="autoencoder.json from train_autoencoder.")
        parser.add_argument(
            "--assert", dest="check", action="store_true", help="Exit with code 4 when a metric misses its floor."
        )

    def run(self, config, artifacts, options):
        report = DetectorService.evaluate(
            config,
            artifacts,
            options["dataset"],
            options.get("classifier"),
            options.get("autoencoder"),
            check=options["check"],
        )
        for section in ("classifier", "autoencoder", "integrated"):
            if section in report:
                metrics = {k: v for k, v in report[section].items() if isinstance(v, (int, float))}
                self.stdout.write(f"{section}: " + ", ".join(f"{k}={v:.4g}" for k, v in sorted(metrics.items())))
        return f"Evaluated {report['records']} test records"
