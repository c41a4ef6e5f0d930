"""Paper-scale runs; enable with WORKBENCH_SLOW_TESTS=1."""
import os
import unittest

import numpy as np
from django.test import SimpleTestCase

from workbench.agent import AgentConfig, evaluate_policy, train
from workbench.choices import AttackChannel, RewardKind, Waveform
from workbench.config import RunConfig
from workbench.datasets import assemble, normal_pool, records_from_training
from workbench.detectors import (
    DetectorConfig,
    check_acceptance,
    evaluate,
    reconstruction_errors,
    select_threshold,
    train_autoencoder,
    train_classifier,
)
from workbench.environment import EnvConfig, oracle_attack, time_to_exit
from workbench.grid import SystemParams

SLOW = os.getenv("WORKBENCH_SLOW_TESTS") == "1"


@unittest.skipUnless(SLOW, "set WORKBENCH_SLOW_TESTS=1 to run full training")
class AttackSynthesisTests(SimpleTestCase):
    def test_fdi_attacker_learns_to_trip_rocof_on_mg2(self):
        params = SystemParams.preset("MG2")
        env_config = EnvConfig(params=params)
        result = train(env_config, AgentConfig(), seed=0, keep_traces=False)
        summary = evaluate_policy(result.nets, env_config, episodes=20, seed=1)
        self.assertGreaterEqual(summary["counts"]["ROCOF"] / 20, 0.8)
        oracle = time_to_exit(oracle_attack(params, AttackChannel.FREQ_MEASUREMENT, 0.1), params)
        self.assertLessEqual(summary["median_time_to_trip"], 3 * oracle.time)

    def test_load_switching_attacker_on_mg1(self):
        env_config = EnvConfig(
            params=SystemParams.preset("MG1"),
            channel=AttackChannel.LOAD_SWITCH,
            switch_power=0.18,
            discrete_switching=True,
            reward_kind=RewardKind.SWITCH,
        )
        result = train(env_config, AgentConfig(), seed=0, keep_traces=False)
        summary = evaluate_policy(result.nets, env_config, episodes=20, seed=1)
        self.assertGreaterEqual(summary["trip_rate"], 0.6)


@unittest.skipUnless(SLOW, "set WORKBENCH_SLOW_TESTS=1 to run the detector protocol")
class DetectorProtocolTests(SimpleTestCase):
    def test_detectors_meet_the_floors(self):
        config = RunConfig.from_dict({})
        env_config = config.env_config(termination="timed-relay")
        episodes = train(env_config, AgentConfig(early_stop_window=0), seed=0).episodes
        pools = records_from_training(episodes)
        pools[1] = normal_pool(config.system, config.load, 3600.0, 1000, seed=1)
        split = assemble(pools, quota=1000, seed=2)
        classifier = train_classifier(split.train, split.validation, DetectorConfig(), seed=3)
        normal = [r for r in split.train if r.label == 1], [r for r in split.validation if r.label == 1]
        autoencoder = train_autoencoder(*normal, DetectorConfig(), seed=3)
        autoencoder.threshold = select_threshold(reconstruction_errors(autoencoder, normal[1]))
        check_acceptance(evaluate(classifier, autoencoder, split.test))


class OracleShapeTests(SimpleTestCase):
    def test_sine_and_square_share_the_eigenmode_period(self):
        params = SystemParams.preset("MG3")
        sine = oracle_attack(params, AttackChannel.FREQ_MEASUREMENT, 0.1)
        square = oracle_attack(params, AttackChannel.FREQ_MEASUREMENT, 0.1, Waveform.SQUARE)
        self.assertEqual(sine.frequency, square.frequency)
        period = 2 * np.pi / sine.frequency
        for t in (0.3, 1.1, 2.0):
            self.assertAlmostEqual(sine.value(t), sine.value(t + period))
            self.assertEqual(np.sign(square.value(t)), np.sign(sine.value(t)) or 1.0)
