from pathlib import Path

from workbench.choices import ThresholdPolicy
from workbench.management.base import WorkbenchCommand
from workbench.services import DetectorService


class Command(WorkbenchCommand):
    help = "Train the BiLSTM autoencoder on normal records and select its anomaly threshold."
    subcommand = "train_autoencoder"
    flag_overrides = {
        "epochs": "detector.max_epochs",
        "threshold_policy": "detector.threshold_policy",
        "threshold": "detector.threshold_value",
    }

    def add_run_arguments(self, parser):
        parser.add_argument("--dataset", type=Path, required=True, help="build_dataset output directory.")
        parser.add_argument("--epochs", type=int, help="Maximum training epochs.")
        parser.add_argument("--threshold-policy", choices=ThresholdPolicy.values)
        parser.add_argument("--threshold", type=float, help="Threshold for the fixed policy.")

    def run(self, config, artifacts, options):
        report = DetectorService.train_autoencoder(config, artifacts, options["dataset"])
        test = report["test"]["autoencoder"]
        return (
            f"Threshold {report['threshold']:.5f} ({report['policy']}); "
            f"test normal/attack accuracy {test['binary_accuracy']:.1%}, false alarms {test['false_alarms']}"
        )
