from workbench.management.base import WorkbenchCommand
from workbench.services import SimulationService


class Command(WorkbenchCommand):
    help = "Report the eigenmodes of the closed-loop plant."
    subcommand = "eig"
    flag_overrides = {"system": "system"}

    def add_run_arguments(self, parser):
        parser.add_argument("--system", help="Preset name (MG1, MG2, MG3).")

    def run(self, config, artifacts, options):
        report = SimulationService.eigenmodes(config, artifacts)
        self.stdout.write(f"{'real':>12} {'imag':>12} {'freq Hz':>10} {'damping':>9} {'tau s':>9}")
        for row in report["modes"]:
            self.stdout.write(
                f"{row['real']:>12.5f} {row['imag']:>12.5f} {row['natural_frequency_hz']:>10.4f} "
                f"{row['damping_ratio']:>9.4f} {row['time_constant']:>9.4f}"
            )
        dominant = report["dominant_oscillatory"]
        if dominant is None:
            return "No oscillatory mode."
        return f"Least-damped oscillatory mode: {dominant['real']:.4f} ± {dominant['imag']:.4f}j rad/s"
