from django.core.exceptions import ValidationError

from workbench.choices import AttackChannel, TerminationMode, Waveform
from workbench.management.base import WorkbenchCommand
from workbench.services import AttackService


class Command(WorkbenchCommand):
    help = "Roll out a trained policy or a baseline attack and report the protection outcome."
    subcommand = "rollout"
    flag_overrides = {
        "system": "system",
        "channel": "attack.channel",
        "psw": "attack.switch_power",
        "termination": "attack.termination",
        "discrete": "attack.discrete_switching",
    }

    def add_run_arguments(self, parser):
        source = parser.add_mutually_exclusive_group()
        source.add_argument("--checkpoint", help="Agent checkpoint written by train_attacker.")
        source.add_argument("--baseline", choices=("oracle", "constant"), help="Open-loop baseline attack.")
        parser.add_argument("--system", help="Preset name (MG1, MG2, MG3).")
        parser.add_argument("--channel", choices=AttackChannel.values)
        parser.add_argument("--psw", type=float, help="Compromised load for the load-switching channel, pu.")
        parser.add_argument("--termination", choices=TerminationMode.values)
        parser.add_argument("--discrete", action="store_const", const=True, help="Discrete load switching.")
        parser.add_argument(
            "--bounds", type=float, nargs=2, metavar=("LO", "HI"), help="Deployment bounds replacing the trained ones."
        )
        parser.add_argument("--amplitude", type=float, help="Baseline amplitude, pu.")
        parser.add_argument("--waveform", choices=Waveform.values, help="Oracle waveform.")
        parser.add_argument("--repeat", type=int, default=1, help="Independent rollouts (default 1).")

    def run(self, config, artifacts, options):
        if options.get("checkpoint") is None and options.get("baseline") is None:
            raise ValidationError({"rollout": "Give --checkpoint or --baseline."})
        report = AttackService.rollout(
            config,
            artifacts,
            checkpoint=options.get("checkpoint"),
            baseline=options.get("baseline"),
            bounds=tuple(options["bounds"]) if options.get("bounds") else None,
            amplitude=options.get("amplitude"),
            waveform=options.get("waveform"),
            repeat=options["repeat"],
        )
        for row in report["rollouts"]:
            kind = row["trip_kind"] or "none"
            when = "" if row["trip_time"] is None else f" at {row['trip_time']:.2f} s"
            self.stdout.write(f"rollout {row['episode']}: trip kind={kind}{when}")
        counts = ", ".join(f"{kind}={count}" for kind, count in report["counts"].items())
        return f"{len(report['rollouts'])} rollout(s): {counts}"
