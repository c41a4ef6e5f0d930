from workbench.choices import AttackChannel, RewardKind, TerminationMode
from workbench.management.base import WorkbenchCommand
from workbench.services import AttackService


class Command(WorkbenchCommand):
    help = "Train a DDPG attacker against the configured plant and attack channel."
    subcommand = "train_attacker"
    flag_overrides = {
        "system": "system",
        "channel": "attack.channel",
        "psw": "attack.switch_power",
        "reward": "attack.reward",
        "termination": "attack.termination",
        "bounds": "attack.bounds",
        "episodes": "agent.max_episodes",
    }

    def add_run_arguments(self, parser):
        parser.add_argument("--system", help="Preset name (MG1, MG2, MG3).")
        parser.add_argument("--channel", choices=AttackChannel.values)
        parser.add_argument("--psw", type=float, help="Compromised load for the load-switching channel, pu.")
        parser.add_argument("--reward", choices=RewardKind.values)
        parser.add_argument("--termination", choices=TerminationMode.values)
        parser.add_argument("--bounds", type=float, nargs=2, metavar=("LO", "HI"), help="Attack bounds, pu.")
        parser.add_argument("--episodes", type=int, help="Maximum training episodes.")
        parser.add_argument(
            "--keep-episodes",
            action="store_true",
            help="Write every training episode to episodes.jsonl for build_dataset --from-run.",
        )
        parser.add_argument("--eval-episodes", type=int, default=20, help="Greedy evaluation rollouts (default 20).")

    def run(self, config, artifacts, options):
        summary = AttackService.train(
            config, artifacts, keep_episodes=options["keep_episodes"], eval_episodes=options["eval_episodes"]
        )
        evaluation = summary["evaluation"]
        median = evaluation["median_time_to_trip"]
        return (
            f"Trained {summary['episodes']} episodes"
            f"{' (stopped early)' if summary['stopped_early'] else ''}; "
            f"greedy trip rate {evaluation['trip_rate']:.0%}, "
            f"median time to trip {'n/a' if median is None else f'{median:.2f} s'}"
        )
