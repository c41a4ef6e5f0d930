from pathlib import Path

from workbench.management.base import WorkbenchCommand
from workbench.services import DetectorService


class Command(WorkbenchCommand):
    help = "Train the supervised LSTM attack classifier on a built dataset."
    subcommand = "train_detector"
    flag_overrides = {"epochs": "detector.max_epochs"}

    def add_run_arguments(self, parser):
        parser.add_argument("--dataset", type=Path, required=True, help="build_dataset output directory.")
        parser.add_argument("--epochs", type=int, help="Maximum training epochs.")

    def run(self, config, artifacts, options):
        report = DetectorService.train_classifier(config, artifacts, options["dataset"])
        metrics = report["classifier"]
        return (
            f"Classifier test accuracy {metrics['accuracy']:.1%}, "
            f"normal/attack {metrics['binary_accuracy']:.1%}, trip/no-trip {metrics['trip_accuracy']:.1%}"
        )
