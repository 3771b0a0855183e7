import os
import tempfile
import unittest
from unittest.mock import patch

from src.cfg.presets import BENCHMARK_PRESETS, deep_merge
from src.config import AlgorithmName, ExperimentConfig, FedRegConfig, config_from_dict, dump_config, echo_config, parse_config
from src.utils.errors import ConfigurationError


class TestConfigParsing(unittest.TestCase):
    """TOML parsing, validation messages and the echo file."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.minimal = os.path.join(os.path.dirname(__file__), "mock", "minimal.toml")

    def tearDown(self):
        self.tmp.cleanup()

    def _write(self, text: str) -> str:
        path = os.path.join(self.tmp.name, "exp.toml")
        with open(path, "w") as f:
            f.write(text)
        return path

    def test_defaults(self):
        config = ExperimentConfig()
        self.assertEqual(config.train.algorithm, AlgorithmName.FEDAVG)
        self.assertEqual(config.train.fedreg.fgsm_steps, 10)
        self.assertAlmostEqual(config.train.fedreg.eta_p, 0.01 * config.train.fedreg.eta_s)
        self.assertIsNone(config.train.dp)

    def test_minimal_file(self):
        config = parse_config(self.minimal)
        self.assertEqual((config.seed, config.rounds, config.clients_per_round), (3, 2, 2))
        self.assertEqual(config.dataset.synthetic.per_class, 20)
        self.assertEqual(config.partition.n_clients, 4)

    def test_gamma_out_of_range_names_key(self):
        path = self._write("[train.fedreg]\ngamma = 1.5\n")
        with self.assertRaises(ConfigurationError) as ctx:
            parse_config(path)
        self.assertIn("train.fedreg.gamma", str(ctx.exception))

    def test_unknown_key_rejected(self):
        with self.assertRaises(ConfigurationError) as ctx:
            config_from_dict({"train": {"learning_rat": 0.1}})
        self.assertIn("train.learning_rat", str(ctx.exception))

    def test_eta_p_above_eta_s(self):
        with self.assertRaises(ValueError):
            FedRegConfig(eta_s=0.1, eta_p=0.2)

    def test_too_many_clients_per_round(self):
        with self.assertRaises(ConfigurationError):
            config_from_dict({"clients_per_round": 11, "partition": {"n_clients": 10}})

    def test_toml_syntax_error(self):
        path = self._write("rounds = = 3\n")
        with self.assertRaises(ConfigurationError) as ctx:
            parse_config(path)
        self.assertIn("line 1", str(ctx.exception))

    def test_missing_file(self):
        with self.assertRaises(ConfigurationError):
            parse_config(os.path.join(self.tmp.name, "absent.toml"))

    def test_idx_needs_paths(self):
        with self.assertRaises(ConfigurationError):
            config_from_dict({"dataset": {"source": "idx"}})

    def test_echo_round_trip(self):
        config = config_from_dict({"preset": "mnist_two_class", "partition": {"n_clients": 50}, "train": {"algorithm": "fedreg", "dp": {"clip_bound": 2.0}}})
        path = echo_config(config, os.path.join(self.tmp.name, "out"))
        self.assertEqual(os.path.basename(path), "config.echo.toml")
        self.assertEqual(parse_config(path), config)
        self.assertEqual(dump_config(parse_config(path)), dump_config(config))


class TestPresets(unittest.TestCase):
    def test_explicit_keys_win(self):
        config = config_from_dict({"preset": "mnist_one_class", "rounds": 7, "partition": {"n_clients": 100}, "train": {"fedreg": {"gamma": 0.9}}})
        self.assertEqual(config.rounds, 7)
        self.assertEqual(config.train.epochs, 20)
        self.assertEqual(config.train.fedreg.gamma, 0.9)
        self.assertEqual(config.train.fedreg.eta_s, 0.2)

    def test_unknown_preset(self):
        with self.assertRaises(ConfigurationError):
            config_from_dict({"preset": "cifar"})

    def test_presets_validate(self):
        for name in BENCHMARK_PRESETS:
            with self.subTest(preset=name):
                config_from_dict({"preset": name, "partition": {"n_clients": 100}})

    def test_emnist_preset(self):
        config = config_from_dict({"preset": "emnist"})
        self.assertEqual((config.partition.scheme.value, config.partition.n_clients, config.partition.client_size), ("one_class", 10000, 24))
        self.assertEqual(config.attack.mg_eta_s, 0.03)
        self.assertEqual(config.attack.attacker_model, "defense")

    def test_deep_merge_leaves_base_alone(self):
        base = {"a": {"b": 1, "c": 2}, "d": 3}
        merged = deep_merge(base, {"a": {"b": 5}})
        self.assertEqual(merged, {"a": {"b": 5, "c": 2}, "d": 3})
        self.assertEqual(base["a"]["b"], 1)


class TestOutputDir(unittest.TestCase):
    def test_resolution_order(self):
        config = ExperimentConfig()
        with patch.dict(os.environ, {"FEDREG_OUTPUT_DIR": "/tmp/from-env"}):
            self.assertEqual(config.resolve_output_dir("cli"), "cli")
            self.assertEqual(config.resolve_output_dir(), "/tmp/from-env")
            self.assertEqual(config.model_copy(update={"output_dir": "cfg"}).resolve_output_dir(), "cfg")
        with patch.dict(os.environ, {}, clear=True):
            self.assertEqual(config.resolve_output_dir(), "outputs")


if __name__ == "__main__":
    unittest.main()
