"""Orchestration for the workbench commands: artifacts, registry and pipeline stages."""
from __future__ import annotations

import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Any

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from django.db import transaction
from django.utils import timezone

from . import datasets
from .agent import (
    evaluate_policy,
    greedy_policy,
    load_agent,
    policy_action,
    save_agent,
    train,
    write_training_log,
)
from .choices import AttackChannel, RecordLabel, TerminationMode, Waveform
from .config import RunConfig
from .constants import RECORD_DT
from .detectors import (
    ConfusionMatrix,
    classify_many,
    check_acceptance,
    evaluate,
    load_detector,
    reconstruction_errors,
    save_detector,
    select_threshold,
    train_autoencoder,
    train_classifier,
    write_mae_histogram,
    write_reconstruction_csv,
)
from .environment import (
    REWARD_FUNCTIONS,
    AttackEnv,
    ConstantAttack,
    EnvConfig,
    EpisodeRecord,
    oracle_attack,
    oracle_vs_constant,
    run_episode,
    run_open_loop,
)
from .grid import dominant_oscillatory_mode, modal_report
from .loads import write_load_csv
from .models import ExperimentRun, RunArtifact
from .neural import network_from_dict, network_to_dict
from .protection import peak_measurements

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TIMESTAMPS_NAME = "manifest.timestamps.json"

REPORT_LOAD_DURATION = 600.0
REWARD_SURFACE_POINTS = 41


def _dumps(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


class ArtifactService:
    """Writes the files of one run and keeps their digests for the manifest."""

    def __init__(self, root: Path, subcommand: str, config: RunConfig, started_at: datetime | None = None) -> None:
        self.root = Path(root)
        self.subcommand = subcommand
        self.config = config
        self.started_at = started_at or timezone.now()
        self.artifacts: dict[str, dict] = {}
        self.finished = False
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ValidationError({"out": f"Cannot create output directory {self.root}: {exc.strerror}."}) from exc

    def path(self, relative: str) -> Path:
        target = self.root / relative
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def register(self, target: Path) -> dict:
        target = Path(target)
        data = target.read_bytes()
        relative = target.relative_to(self.root).as_posix()
        entry = {"path": relative, "sha256": hashlib.sha256(data).hexdigest(), "size": len(data)}
        self.artifacts[relative] = entry
        logger.info("artifact path=%s size=%d sha256=%s", relative, entry["size"], entry["sha256"][:12])
        return entry

    def write_text(self, relative: str, text: str) -> Path:
        target = self.path(relative)
        target.write_text(text)
        self.register(target)
        return target

    def write_json(self, relative: str, payload: Any) -> Path:
        return self.write_text(relative, _dumps(payload))

    def write_with(self, relative: str, writer, *args) -> Path:
        """Run ``writer(*args, stream)`` into a text buffer and store the result."""
        buffer = io.StringIO()
        writer(*args, buffer)
        return self.write_text(relative, buffer.getvalue())

    def manifest(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "config_hash": self.config.config_hash(),
            "seeds": dict(self.config.seeds),
            "artifacts": [self.artifacts[key] for key in sorted(self.artifacts)],
        }

    def finish(self) -> dict:
        if self.finished:
            return self.manifest()
        manifest = self.manifest()
        (self.root / MANIFEST_NAME).write_text(_dumps(manifest))
        self.finished_at = timezone.now()
        (self.root / TIMESTAMPS_NAME).write_text(
            _dumps({"started_at": self.started_at.isoformat(), "finished_at": self.finished_at.isoformat()})
        )
        self.finished = True
        return manifest


class RegistryService:
    @staticmethod
    def enabled() -> bool:
        return bool(getattr(settings, "WORKBENCH_RUN_REGISTRY", False))

    @staticmethod
    def record_run(
        subcommand: str,
        config: RunConfig | None,
        output_dir: Path | None,
        exit_code: int,
        artifacts: list[dict],
        started_at: datetime,
    ) -> ExperimentRun | None:
        """Persist one finished run and its artifacts when the registry is on."""
        if not RegistryService.enabled():
            return None
        status = ExperimentRun.Status.SUCCEEDED if exit_code == 0 else ExperimentRun.Status.FAILED
        with transaction.atomic():
            run = ExperimentRun.objects.create(
                subcommand=subcommand,
                config_hash=config.config_hash() if config else "",
                base_seed=config.seeds["base"] if config else 0,
                output_dir=str(output_dir or ""),
                status=status,
                exit_code=exit_code,
                started_at=started_at,
                finished_at=timezone.now(),
            )
            RunArtifact.objects.bulk_create(
                [
                    RunArtifact(run=run, path=entry["path"], sha256=entry["sha256"], size=entry["size"])
                    for entry in artifacts
                ]
            )
        logger.info("registered run id=%s subcommand=%s status=%s", run.pk, subcommand, status)
        return run


class SimulationService:
    @staticmethod
    def simulate_normal(config: RunConfig, artifacts: ArtifactService, duration: float) -> dict:
        """Sample a load walk, simulate the plant under it and write both."""
        if not duration > 0:
            raise ValidationError({"duration": "Duration must be positive."})
        seed = config.stage_seed("simulation")
        logger.info("simulate normal duration=%s seed=%d", duration, seed)
        trace, schedule = datasets.simulate_normal(config.system, config.load, duration, seed)
        artifacts.write_with("trace.csv", trace.write_csv)
        artifacts.write_with("load.csv", write_load_csv, schedule)
        summary = {
            "duration": duration,
            "samples": len(trace),
            "sample_period": trace.sample_period,
            "seed": seed,
            "peaks": peak_measurements(trace),
        }
        artifacts.write_json("summary.json", summary)
        return summary

    @staticmethod
    def eigenmodes(config: RunConfig, artifacts: ArtifactService) -> dict:
        rows = modal_report(config.system)
        try:
            mode = dominant_oscillatory_mode(config.system)
            dominant = {"real": float(mode.real), "imag": float(mode.imag)}
        except ValidationError:
            dominant = None
        report = {"system": config.system.to_dict(), "modes": rows, "dominant_oscillatory": dominant}
        artifacts.write_json("eigenmodes.json", report)
        return report


def _baseline_attack(env_config: EnvConfig, baseline: str, amplitude: float | None, waveform: str | None):
    channel = AttackChannel(env_config.channel)
    if amplitude is None:
        lo, hi = env_config.action_bounds
        amplitude = hi if channel == AttackChannel.LOAD_SWITCH else max(abs(lo), abs(hi))
    if baseline == "constant":
        return ConstantAttack(channel, float(amplitude))
    if waveform is None:
        waveform = Waveform.SQUARE
    return oracle_attack(env_config.params, channel, amplitude, Waveform(waveform))


def _rollout_job(args) -> EpisodeRecord:
    env_config, actor_state, attack, seed, index = args
    env = AttackEnv(env_config)
    if actor_state is not None:
        actor, _ = network_from_dict(actor_state)
        return run_episode(env, lambda obs: float(policy_action(actor, obs.as_array())[0]), seed=seed, episode=index)
    return run_open_loop(env, attack, seed=seed, episode=index)


def _train_source(args) -> list[EpisodeRecord]:
    env_config, agent_config, seed = args
    return train(env_config, agent_config, seed=seed, keep_traces=True).episodes


def _fan_out(function, jobs: list, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(function, jobs))
    return [function(job) for job in jobs]


class AttackService:
    @staticmethod
    def train(config: RunConfig, artifacts: ArtifactService, keep_episodes: bool = False, eval_episodes: int = 20) -> dict:
        env_config = config.env_config()
        seed = config.stage_seed("agent")
        result = train(env_config, config.agent, seed=seed, keep_traces=keep_episodes)
        save_agent(artifacts.path("agent.json"), result.nets, config.agent)
        artifacts.register(artifacts.path("agent.json"))
        artifacts.write_with("training_log.jsonl", write_training_log, result.log)
        if keep_episodes:
            lines = [json.dumps(episode.to_dict(), sort_keys=True) + "\n" for episode in result.episodes]
            artifacts.write_text("episodes.jsonl", "".join(lines))
        evaluation = evaluate_policy(
            result.nets, env_config, episodes=eval_episodes, seed=seed, workers=settings.WORKBENCH_WORKERS
        )
        summary = {
            "episodes": len(result.log),
            "stopped_early": result.stopped_early,
            "evaluation": evaluation,
        }
        artifacts.write_json("training_summary.json", summary)
        return summary

    @staticmethod
    def rollout(
        config: RunConfig,
        artifacts: ArtifactService,
        checkpoint: Path | None = None,
        baseline: str | None = None,
        bounds: tuple[float, float] | None = None,
        amplitude: float | None = None,
        waveform: str | None = None,
        repeat: int = 1,
    ) -> dict:
        """Roll a frozen policy or a baseline attack; one trace and trip report per repeat."""
        if (checkpoint is None) == (baseline is None):
            raise ValidationError({"rollout": "Give either a checkpoint or a baseline attack."})
        if repeat < 1:
            raise ValidationError({"repeat": "Repeat at least once."})
        env_config = config.env_config()
        if bounds is not None:
            env_config = env_config.with_bounds(bounds)
            env_config.clean()
        actor_state, attack = None, None
        if checkpoint is not None:
            nets, _ = load_agent(checkpoint)
            actor_state = network_to_dict(nets.actor)
        else:
            attack = _baseline_attack(env_config, baseline, amplitude, waveform)
        seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(config.stage_seed("simulation")).spawn(repeat)]
        jobs = [(env_config, actor_state, attack, seed, index) for index, seed in enumerate(seeds)]
        records = _fan_out(_rollout_job, jobs, settings.WORKBENCH_WORKERS)

        rows = []
        for index, record in enumerate(records):
            stem = "rollout" if repeat == 1 else f"rollouts/rollout_{index:03d}"
            artifacts.write_with(f"{stem}.csv", record.trace.write_csv)
            artifacts.write_json(f"{stem}.json", record.metadata.to_dict())
            rows.append(record.metadata.to_dict())
        kinds = [row["trip_kind"] or "none" for row in rows]
        times = [row["trip_time"] for row in rows if row["trip_time"] is not None]
        report = {
            "source": "checkpoint" if checkpoint is not None else baseline,
            "attack": _describe_attack(attack),
            "rollouts": rows,
            "counts": {kind: kinds.count(kind) for kind in sorted(set(kinds))},
            "median_time_to_trip": float(np.median(times)) if times else None,
        }
        artifacts.write_json("trip_report.json", report)
        return report


def _describe_attack(attack) -> dict | None:
    if attack is None:
        return None
    description = {"channel": str(attack.channel), "amplitude": attack.amplitude}
    if hasattr(attack, "waveform"):
        description.update(waveform=str(attack.waveform), frequency=attack.frequency)
    return description


def _merge_pools(pools: list[dict[int, list]]) -> dict[int, list]:
    merged: dict[int, list] = {}
    for pool in pools:
        for label, records in pool.items():
            merged.setdefault(label, []).extend(records)
    for records in merged.values():
        records.sort(key=lambda r: r.provenance.get("episode") or 0)
    return merged


class DatasetService:
    @staticmethod
    def attack_pools(config: RunConfig, seed: int, from_run: Path | None = None) -> tuple[dict[int, list], list[str]]:
        """Attack record pools from a logged training run, or by training one attacker per source."""
        if from_run is not None:
            path = Path(from_run) / "episodes.jsonl"
            if not path.exists():
                raise ValidationError({"from_run": f"{path} not found; train with --keep-episodes."})
            with path.open() as stream:
                episodes = datasets.read_episodes(stream, str(path))
            return datasets.records_from_training(episodes, source=str(from_run)), [str(from_run)]

        agent_config = replace(config.agent, max_episodes=config.dataset.attack_episodes, early_stop_window=0)
        source_seeds = np.random.SeedSequence(seed).spawn(len(config.dataset.sources))
        jobs, names = [], []
        for overrides, seed in zip(config.dataset.sources, source_seeds):
            env_config = config.env_config(**{**overrides, "termination": TerminationMode.TIMED_RELAY.value})
            jobs.append((env_config, agent_config, int(seed.generate_state(1)[0])))
            names.append(f"train:{env_config.channel}")
        results = _fan_out(_train_source, jobs, settings.WORKBENCH_WORKERS)
        pools = [datasets.records_from_training(episodes, source=name) for episodes, name in zip(results, names)]
        return _merge_pools(pools), names

    @staticmethod
    def build(config: RunConfig, artifacts: ArtifactService, from_run: Path | None = None) -> dict:
        ds = config.dataset
        attack_seed, normal_seed, assemble_seed = (
            int(s.generate_state(1)[0]) for s in np.random.SeedSequence(config.stage_seed("dataset")).spawn(3)
        )
        pools, sources = DatasetService.attack_pools(config, attack_seed, from_run)
        pools[int(RecordLabel.NORMAL)] = datasets.normal_pool(
            config.system, config.load, ds.normal_duration, ds.quota, normal_seed, ds.length_range
        )
        logger.info("dataset pools %s", {label: len(pool) for label, pool in sorted(pools.items())})
        split = datasets.assemble(pools, ds.quota, ds.fractions, assemble_seed)
        for path in datasets.serialize(split, artifacts.root):
            artifacts.register(path)
        manifest = datasets.dataset_manifest(split, ds.quota, dict(config.seeds), sources)
        artifacts.write_json("dataset.json", manifest)
        return manifest


class DetectorService:
    @staticmethod
    def load_split(config: RunConfig, dataset_dir: Path) -> datasets.DatasetSplit:
        return datasets.load(dataset_dir, config.dataset.fractions)

    @staticmethod
    def train_classifier(config: RunConfig, artifacts: ArtifactService, dataset_dir: Path) -> dict:
        split = DetectorService.load_split(config, dataset_dir)
        model = train_classifier(split.train, split.validation, config.detector, seed=config.stage_seed("detector"))
        save_detector(artifacts.path("classifier.json"), model)
        artifacts.register(artifacts.path("classifier.json"))
        report = evaluate(model, None, split.test)
        artifacts.write_json("classifier_eval.json", report)
        return report

    @staticmethod
    def train_autoencoder(config: RunConfig, artifacts: ArtifactService, dataset_dir: Path) -> dict:
        split = DetectorService.load_split(config, dataset_dir)
        normal = {
            name: [r for r in records if r.label == RecordLabel.NORMAL]
            for name, records in (("train", split.train), ("validation", split.validation))
        }
        model = train_autoencoder(normal["train"], normal["validation"], config.detector, seed=config.stage_seed("detector"))
        errors = reconstruction_errors(model, normal["validation"])
        det = config.detector
        model.threshold = select_threshold(errors, det.threshold_policy, det.threshold_factor, det.threshold_value)
        save_detector(artifacts.path("autoencoder.json"), model)
        artifacts.register(artifacts.path("autoencoder.json"))
        report = {
            "threshold": model.threshold,
            "policy": det.threshold_policy,
            "validation_max_mae": float(errors.max()),
            "test": evaluate(None, model, split.test),
        }
        artifacts.write_json("autoencoder_eval.json", report)
        return report

    @staticmethod
    def evaluate(
        config: RunConfig,
        artifacts: ArtifactService,
        dataset_dir: Path,
        classifier_path: Path | None,
        autoencoder_path: Path | None,
        check: bool = False,
    ) -> dict:
        if classifier_path is None and autoencoder_path is None:
            raise ValidationError({"evaluate": "Give a classifier, an autoencoder or both."})
        split = DetectorService.load_split(config, dataset_dir)
        classifier = load_detector(classifier_path) if classifier_path else None
        autoencoder = load_detector(autoencoder_path) if autoencoder_path else None
        report = evaluate(classifier, autoencoder, split.test)
        artifacts.write_json("evaluation.json", report)
        if "classifier" in report:
            artifacts.write_with("confusion.csv", ConfusionMatrix(report["classifier"]["counts"]).write_csv)
        if check:
            artifacts.finish()
            check_acceptance(report)
        return report


def _reward_surface(kind: str, reward_config, dw_range, rocof_range) -> str:
    reward = REWARD_FUNCTIONS[kind]
    lines = ["dw,rocof,reward\n"]
    for dw in np.linspace(*dw_range, REWARD_SURFACE_POINTS):
        for rocof in np.linspace(*rocof_range, REWARD_SURFACE_POINTS):
            value = reward(float(dw), float(rocof), None, reward_config)
            lines.append(f"{float(dw)!r},{float(rocof)!r},{value!r}\n")
    return "".join(lines)


class ReportService:
    @staticmethod
    def reward_surfaces(config: RunConfig, artifacts: ArtifactService) -> None:
        base = config.system.base_frequency
        relay = config.relay
        dw_range = (1.2 * (relay.uf_threshold - base) / base, 1.2 * (relay.of_threshold - base) / base)
        rocof_limit = 2.0 * relay.rocof_threshold / base
        reward_config = config.env_config().reward
        for kind in REWARD_FUNCTIONS:
            artifacts.write_text(
                f"reward_{kind}.csv", _reward_surface(kind, reward_config, dw_range, (-rocof_limit, rocof_limit))
            )

    @staticmethod
    def load_response(config: RunConfig, artifacts: ArtifactService, duration: float = REPORT_LOAD_DURATION) -> None:
        trace, schedule = datasets.simulate_normal(
            config.system, config.load, duration, config.stage_seed("simulation"), sample_period=RECORD_DT
        )
        artifacts.write_with("load_trace.csv", write_load_csv, schedule)
        artifacts.write_with("load_response.csv", trace.write_csv)

    @staticmethod
    def oracle_traces(config: RunConfig, artifacts: ArtifactService) -> None:
        env_config = replace(config.env_config(), termination=TerminationMode.SUPPRESSED, background_load=False)
        for waveform in Waveform:
            attack = _baseline_attack(env_config, "oracle", None, waveform)
            record = run_open_loop(AttackEnv(env_config), attack)
            artifacts.write_with(f"oracle_{waveform}.csv", record.trace.write_csv)
        if env_config.channel != AttackChannel.LOAD_SWITCH:
            lo, hi = env_config.bounds
            comparison = oracle_vs_constant(
                config.system,
                AttackChannel(env_config.channel),
                amplitude=max(abs(lo), abs(hi)),
                relay=config.relay,
                horizon=env_config.episode_limit,
            )
            artifacts.write_json("oracle_vs_constant.json", comparison)

    @staticmethod
    def policy_rollout(config: RunConfig, artifacts: ArtifactService, checkpoint: Path) -> None:
        nets, _ = load_agent(checkpoint)
        env_config = replace(config.env_config(), termination=TerminationMode.SUPPRESSED)
        record = run_episode(AttackEnv(env_config), greedy_policy(nets), seed=config.stage_seed("simulation"))
        artifacts.write_with("policy_rollout.csv", record.trace.write_csv)
        artifacts.write_json("policy_rollout.json", record.metadata.to_dict())

    @staticmethod
    def detector_figures(
        config: RunConfig,
        artifacts: ArtifactService,
        dataset_dir: Path,
        classifier_path: Path | None,
        autoencoder_path: Path | None,
    ) -> None:
        split = DetectorService.load_split(config, dataset_dir)
        labels = [int(r.label) for r in split.test]
        if classifier_path is not None:
            classifier = load_detector(classifier_path)
            predicted = [int(label) for label in classify_many(classifier, split.test)]
            artifacts.write_with("confusion.csv", ConfusionMatrix.from_labels(labels, predicted).write_csv)
        if autoencoder_path is not None:
            autoencoder = load_detector(autoencoder_path)
            errors = reconstruction_errors(autoencoder, split.test)
            artifacts.write_with("mae_histogram.csv", write_mae_histogram, errors, labels)
            for label in RecordLabel:
                example = next((r for r in split.test if r.label == label), None)
                if example is not None:
                    artifacts.write_with(
                        f"reconstruction_label{int(label)}.csv", write_reconstruction_csv, autoencoder, example
                    )

    @staticmethod
    def build(
        config: RunConfig,
        artifacts: ArtifactService,
        checkpoint: Path | None = None,
        dataset_dir: Path | None = None,
        classifier_path: Path | None = None,
        autoencoder_path: Path | None = None,
    ) -> list[str]:
        """Write every plot-ready table the given inputs allow."""
        ReportService.reward_surfaces(config, artifacts)
        ReportService.load_response(config, artifacts)
        ReportService.oracle_traces(config, artifacts)
        if checkpoint is not None:
            ReportService.policy_rollout(config, artifacts, checkpoint)
        if dataset_dir is not None and (classifier_path or autoencoder_path):
            ReportService.detector_figures(config, artifacts, dataset_dir, classifier_path, autoencoder_path)
        return sorted(artifacts.artifacts)
