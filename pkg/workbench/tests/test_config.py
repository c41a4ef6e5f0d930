import json
import tempfile
from pathlib import Path

from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from workbench.choices import AttackChannel, TerminationMode
from workbench.config import RunConfig, apply_overrides, json_schema


class RunConfigTests(SimpleTestCase):
    def test_defaults(self):
        config = RunConfig.from_dict({})
        self.assertEqual(config.system, RunConfig().system)
        self.assertEqual(config.seeds["base"], 0)
        self.assertIsNone(config.output_dir)

    def test_preset_with_parameter_changes(self):
        config = RunConfig.from_dict({"system": {"preset": "MG1", "inertia": 7.0}})
        self.assertEqual(config.system.inertia, 7.0)
        self.assertEqual(config.system.agc_gain, 3.0)

    def test_unknown_section_and_key(self):
        with self.assertRaises(ValidationError) as ctx:
            RunConfig.from_dict({"plant": {}})
        self.assertIn("config", ctx.exception.message_dict)
        with self.assertRaises(ValidationError) as ctx:
            RunConfig.from_dict({"relay": {"of_delay": 0.1}})
        self.assertIn("relay", ctx.exception.message_dict)

    def test_type_errors_name_the_field(self):
        with self.assertRaises(ValidationError) as ctx:
            RunConfig.from_dict({"dataset": {"quota": 2.5}})
        self.assertIn("dataset.quota", ctx.exception.message_dict)
        with self.assertRaises(ValidationError) as ctx:
            RunConfig.from_dict({"attack": {"background_load": "yes"}})
        self.assertIn("attack.background_load", ctx.exception.message_dict)

    def test_values_are_validated(self):
        with self.assertRaises(ValidationError) as ctx:
            RunConfig.from_dict({"relay": {"uf_threshold": 61.0}})
        self.assertTrue(ctx.exception.message_dict)
        with self.assertRaises(ValidationError):
            RunConfig.from_dict({"attack": {"termination": "never"}})

    def test_seeds_must_be_explicit_integers(self):
        for seeds in ({"base": -1}, {"base": 1.5}, {"base": True}, {"weather": 3}):
            with self.subTest(seeds=seeds), self.assertRaises(ValidationError):
                RunConfig.from_dict({"seeds": seeds})

    def test_hash_is_stable_and_sensitive(self):
        a = RunConfig.from_dict({"seeds": {"base": 4}})
        b = RunConfig.from_dict(json.loads(json.dumps(a.to_dict())))
        c = RunConfig.from_dict({"seeds": {"base": 5}})
        self.assertEqual(a.config_hash(), b.config_hash())
        self.assertNotEqual(a.config_hash(), c.config_hash())
        self.assertEqual(len(a.config_hash()), 64)

    def test_stage_seeds_differ_and_follow_base(self):
        config = RunConfig.from_dict({})
        self.assertNotEqual(config.stage_seed("agent"), config.stage_seed("dataset"))
        self.assertEqual(config.stage_seed("agent"), RunConfig.from_dict({}).stage_seed("agent"))
        other = RunConfig.from_dict({"seeds": {"base": 1}})
        self.assertNotEqual(config.stage_seed("agent"), other.stage_seed("agent"))
        with self.assertRaises(ValidationError):
            config.stage_seed("weather")

    def test_env_config_applies_changes(self):
        config = RunConfig.from_dict({"attack": {"switch_power": 0.18}})
        env = config.env_config(channel="load", termination="timed-relay")
        self.assertEqual(env.channel, AttackChannel.LOAD_SWITCH)
        self.assertEqual(env.termination, TerminationMode.TIMED_RELAY)
        self.assertEqual(env.action_bounds, (0.0, 0.18))
        self.assertEqual(config.attack.channel, AttackChannel.FREQ_MEASUREMENT)


class LoadTests(SimpleTestCase):
    def test_file_and_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.json"
            path.write_text(json.dumps({"system": "MG3", "agent": {"batch_size": 64}}))
            config = RunConfig.load(path, ["agent.batch_size=16", "system.inertia=9", "output_dir=runs/a"])
        self.assertEqual(config.agent.batch_size, 16)
        self.assertEqual(config.system.inertia, 9.0)
        self.assertEqual(config.system.agc_gain, 12.0)
        self.assertEqual(config.output_dir, "runs/a")

    def test_missing_and_malformed_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ValidationError):
                RunConfig.load(Path(tmp) / "absent.json")
            broken = Path(tmp) / "broken.json"
            broken.write_text("{")
            with self.assertRaises(ValidationError) as ctx:
                RunConfig.load(broken)
        self.assertIn("config", ctx.exception.message_dict)

    def test_override_syntax(self):
        self.assertEqual(apply_overrides({}, ['attack.channel=load']), {"attack": {"channel": "load"}})
        self.assertEqual(apply_overrides({}, ["attack.bounds=[-0.05, 0.05]"]), {"attack": {"bounds": [-0.05, 0.05]}})
        for bad in ("attack.channel", "=3", "plant.mass=2"):
            with self.subTest(bad=bad), self.assertRaises(ValidationError):
                apply_overrides({}, [bad])

    def test_overrides_do_not_mutate_input(self):
        data = {"agent": {"gamma": 0.9}}
        apply_overrides(data, ["agent.gamma=0.5"])
        self.assertEqual(data, {"agent": {"gamma": 0.9}})


class SchemaTests(SimpleTestCase):
    def test_schema_covers_every_section(self):
        schema = json_schema()
        self.assertEqual(
            set(schema["properties"]),
            {"system", "attack", "relay", "load", "agent", "dataset", "detector", "seeds", "output_dir"},
        )
        self.assertEqual(schema["properties"]["agent"]["properties"]["batch_size"], {"type": "integer", "default": 128})
        self.assertFalse(schema["properties"]["relay"]["additionalProperties"])
