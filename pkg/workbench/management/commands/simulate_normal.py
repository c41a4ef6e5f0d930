from workbench.management.base import WorkbenchCommand
from workbench.services import SimulationService


class Command(WorkbenchCommand):
    help = "Simulate the plant under a sampled normal-operation load walk and write the trace."
    subcommand = "simulate_normal"
    flag_overrides = {"system": "system"}

    def add_run_arguments(self, parser):
        parser.add_argument("--duration", type=float, default=3600.0, help="Simulated seconds (default 3600).")
        parser.add_argument("--system", help="Preset name (MG1, MG2, MG3).")

    def run(self, config, artifacts, options):
        summary = SimulationService.simulate_normal(config, artifacts, options["duration"])
        peaks = summary["peaks"]
        return (
            f"Simulated {summary['duration']:g} s ({summary['samples']} samples); "
            f"peak |dw_meas|={peaks['dw_meas']:.5f} pu, peak |rocof_meas|={peaks['rocof_meas']:.5f} pu/s"
        )
