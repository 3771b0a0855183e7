import io
import json
import os
import tempfile
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
import unittest
from contextlib import redirect_stdout

import numpy as np
import pandas as pd
from scipy.stats import chisquare

from src.cfg.presets import deep_merge
from src.config import config_from_dict
from src.data.models import ClientUpdate
from src.diagnostics.summary import summarize_run
from src.main import EXIT_CONFIG, EXIT_OK, main
from src.simulator import FederatedSimulator, aggregate_average, load_experiment_data, sample_clients
from src.utils.display import _fmt, print_partition_stats, print_round_table, print_run_summary
from src.utils.errors import ConfigurationError, NumericError

MINIMAL = {
    "seed": 3,
    "rounds": 3,
    "clients_per_round": 2,
    "dataset": {"synthetic": {"per_class": 20}},
    "partition": {"n_clients": 4},
    "model": {"hidden_dims": [4]},
    "train": {"epochs": 1, "batch_size": 5},
}

MOCK_DIR = os.path.join(os.path.dirname(__file__), "mock")


def make_config(**overrides):
    return config_from_dict(deep_merge(MINIMAL, overrides))


def make_simulator(**overrides) -> FederatedSimulator:
    return FederatedSimulator.from_config(make_config(**overrides))


class TestClientSampling(unittest.TestCase):
    def test_sorted_and_distinct(self):
        chosen = sample_clients(list(range(10)), 4, np.random.default_rng(0))
        self.assertEqual(chosen, sorted(set(chosen)))
        self.assertEqual(len(chosen), 4)
        self.assertEqual(sample_clients(list(range(3)), 3, np.random.default_rng(1)), [0, 1, 2])

    def test_too_many(self):
        with self.assertRaises(ConfigurationError):
            sample_clients([0, 1], 3, np.random.default_rng(0))

    def test_uniform(self):
        """Every client is picked about equally often."""
        rng = np.random.default_rng(12)
        counts = np.zeros(10)
        for _ in range(3000):
            counts[sample_clients(list(range(10)), 3, rng)] += 1
        self.assertGreater(chisquare(counts).pvalue, 1e-3)


class TestAggregation(unittest.TestCase):
    def _update(self, cid, values, n=1):
        return ClientUpdate(client_id=cid, trained_params=np.asarray(values, dtype=float), n_examples=n)

    def test_mean(self):
        updates = [self._update(0, [1.0, 2.0]), self._update(1, [3.0, 6.0])]
        np.testing.assert_array_equal(aggregate_average(updates), [2.0, 4.0])

    def test_weighted(self):
        updates = [self._update(0, [0.0], n=1), self._update(1, [4.0], n=3)]
        np.testing.assert_array_equal(aggregate_average(updates, weighted=True), [3.0])

    def test_order_independent(self):
        rng = np.random.default_rng(0)
        updates = [self._update(i, rng.normal(size=5)) for i in range(6)]
        np.testing.assert_array_equal(aggregate_average(updates), aggregate_average(updates[::-1]))

    def test_invalid(self):
        with self.assertRaises(ConfigurationError):
            aggregate_average([])
        with self.assertRaises(ConfigurationError):
            aggregate_average([self._update(0, [1.0]), self._update(1, [1.0, 2.0])])


class TestFederatedSimulator(unittest.TestCase):
    def test_zero_rounds(self):
        simulator = make_simulator()
        before = simulator.global_params.copy()
        self.assertEqual(simulator.run_rounds(0), [])
        np.testing.assert_array_equal(simulator.global_params, before)

    def test_deterministic(self):
        a, b = make_simulator(), make_simulator()
        records_a, records_b = a.run_rounds(), b.run_rounds()
        np.testing.assert_array_equal(a.global_params, b.global_params)
        self.assertEqual([r.to_row() for r in records_a], [r.to_row() for r in records_b])

    def test_workers_do_not_change_results(self):
        for algorithm in ("fedavg", "scaffold", "fedreg"):
            with self.subTest(algorithm=algorithm):
                config = make_config(train={"algorithm": algorithm})
                train, test = load_experiment_data(config)
                serial = FederatedSimulator(config, train, test, workers=1)
                parallel = FederatedSimulator(config, train, test, workers=4)
                serial.run_rounds()
                parallel.run_rounds()
                np.testing.assert_array_equal(serial.global_params, parallel.global_params)

    def test_fedprox_mu_zero_matches_fedavg(self):
        fedavg = make_simulator()
        fedprox = make_simulator(train={"algorithm": "fedprox", "mu": 0.0})
        fedavg.run_rounds()
        fedprox.run_rounds()
        np.testing.assert_array_equal(fedavg.global_params, fedprox.global_params)

    def test_rounds_continue(self):
        simulator = make_simulator()
        first = simulator.run_rounds(2)
        second = simulator.run_rounds(1)
        self.assertEqual([r.round for r in first + second], [1, 2, 3])
        self.assertEqual(len(simulator.records), 3)

    def test_on_round_callback(self):
        seen = []
        config = make_config()
        train, test = load_experiment_data(config)
        FederatedSimulator(config, train, test, on_round=seen.append).run_rounds()
        self.assertEqual([r.round for r in seen], [1, 2, 3])

    def test_forgetting_measured_on_previous_clients(self):
        records = make_simulator().run_rounds()
        self.assertIsNone(records[0].mean_increment)
        for previous, current in zip(records, records[1:]):
            self.assertEqual(sorted(current.client_loss_prev), previous.sampled_clients)
            self.assertAlmostEqual(current.mean_increment, current.mean_loss_curr - current.mean_loss_prev, places=12)

    def test_fisher_correlation_in_range(self):
        records = make_simulator(train={"algorithm": "fedreg"}).run_rounds()
        self.assertIsNone(records[0].fisher_correlation)
        rhos = [r.fisher_correlation for r in records[1:] if r.fisher_correlation is not None]
        self.assertTrue(rhos)
        for rho in rhos:
            self.assertGreaterEqual(rho, -1.0)
            self.assertLessEqual(rho, 1.0)

    def test_fisher_diagnostics_off(self):
        records = make_simulator(fisher_diagnostics=False).run_rounds()
        self.assertTrue(all(r.fisher_correlation is None for r in records))

    def test_scaffold_server_state(self):
        simulator = make_simulator(train={"algorithm": "scaffold"})
        record = simulator.run_rounds(1)[0]
        self.assertGreater(np.linalg.norm(simulator.state.control_variate), 0.0)
        for cid in record.sampled_clients:
            self.assertIsNotNone(simulator.cache.get_control_variate(cid))

    def test_fedcurv_server_state(self):
        simulator = make_simulator(train={"algorithm": "fedcurv", "lam": 0.01})
        record = simulator.run_rounds(1)[0]
        self.assertEqual(simulator.cache.fisher_clients(), record.sampled_clients)
        simulator.run_rounds(1)
        self.assertTrue(np.all(np.isfinite(simulator.global_params)))

    def test_round_history_bounded_by_fisher_window(self):
        simulator = make_simulator(rounds=6, fisher_window=2)
        records = simulator.run_rounds()
        self.assertEqual(len(simulator.cache._round_history), 2)
        self.assertEqual(simulator.cache.get_round_clients(6), records[-1].sampled_clients)
        self.assertIsNone(simulator.cache.get_round_clients(4))

    def test_paired_reference_leaves_training_alone(self):
        plain = make_simulator(train={"algorithm": "fedreg"})
        paired = make_simulator(train={"algorithm": "fedreg"}, paired_reference="fedavg")
        plain_records, paired_records = plain.run_rounds(), paired.run_rounds()
        np.testing.assert_array_equal(plain.global_params, paired.global_params)
        self.assertEqual([r.test_accuracy for r in plain_records], [r.test_accuracy for r in paired_records])
        self.assertIsNone(paired_records[0].paired_increment)
        for record in paired_records[1:]:
            self.assertAlmostEqual(record.paired_increment, record.paired_loss_curr - record.mean_loss_prev, places=12)
        self.assertTrue(all(r.paired_increment is None for r in plain_records))

    def test_paired_with_itself_matches_own_increment(self):
        records = make_simulator(paired_reference="fedavg").run_rounds()
        for record in records[1:]:
            self.assertAlmostEqual(record.paired_increment, record.mean_increment, places=12)

    def test_paired_reference_parallel(self):
        config = make_config(train={"algorithm": "fedreg"}, paired_reference="fedprox")
        train, test = load_experiment_data(config)
        serial = FederatedSimulator(config, train, test, workers=1).run_rounds()
        parallel = FederatedSimulator(config, train, test, workers=3).run_rounds()
        self.assertEqual([r.to_row() for r in serial], [r.to_row() for r in parallel])

    def test_paired_reference_must_be_stateless(self):
        for algorithm in ("scaffold", "fedcurv"):
            with self.subTest(algorithm=algorithm):
                with self.assertRaises(ConfigurationError):
                    make_simulator(paired_reference=algorithm)

    def test_analyze_performance(self):
        simulator = make_simulator()
        self.assertTrue(simulator.analyze_performance().empty)
        simulator.run_rounds()
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "curves.png")
            frame = simulator.analyze_performance(plot_path=path)
            self.assertTrue(os.path.exists(path))
        self.assertEqual(list(frame.index), [1, 2, 3])


class TestForgettingAcrossSeeds(unittest.TestCase):
    """FedAvg and FedReg on the blobs forgetting preset over ten seeds."""

    SEEDS = range(10)

    @classmethod
    def setUpClass(cls):
        cls.fedavg, cls.fedreg = {}, {}
        for seed in cls.SEEDS:
            fedavg = config_from_dict({"preset": "blobs_forgetting", "seed": seed, "fisher_diagnostics": False})
            fedreg = config_from_dict({"preset": "blobs_forgetting", "seed": seed, "train": {"algorithm": "fedreg"}})
            cls.fedavg[seed] = summarize_run(FederatedSimulator.from_config(fedavg).run_rounds(), None)
            cls.fedreg[seed] = summarize_run(FederatedSimulator.from_config(fedreg).run_rounds(), None)

    def test_fedavg_forgets(self):
        forgetting = [seed for seed in self.SEEDS if self.fedavg[seed]["mean_increment"] > 0.0]
        self.assertGreaterEqual(len(forgetting), 8, {s: self.fedavg[s]["mean_increment"] for s in self.SEEDS})

    def test_fedreg_forgets_less_than_fedavg(self):
        better = [seed for seed in self.SEEDS if self.fedreg[seed]["mean_increment"] < self.fedavg[seed]["mean_increment"]]
        self.assertGreaterEqual(len(better), 6, better)

    def test_fisher_correlation_mostly_positive(self):
        rhos = {seed: self.fedreg[seed]["mean_fisher_correlation"] for seed in self.SEEDS}
        positive = [seed for seed, rho in rhos.items() if rho is not None and rho > 0.0]
        self.assertGreaterEqual(len(positive), 6, rhos)


class TestFlaggedUpdates(unittest.TestCase):
    def _simulator(self, train_func):
        simulator = make_simulator(clients_per_round=4, fisher_diagnostics=False)
        simulator.algorithm_entry = {**simulator.algorithm_entry, "train_func": train_func}
        return simulator

    def test_flagged_clients_left_out(self):
        def fake_train(spec, params, shard, cfg, rng, client_id=0, **kwargs):
            return ClientUpdate(client_id=client_id, trained_params=np.full_like(params, float(client_id)), n_examples=len(shard), flagged=client_id % 2 == 0)

        simulator = self._simulator(fake_train)
        record = simulator.run_rounds(1)[0]
        self.assertEqual(record.flagged_clients, 2)
        np.testing.assert_array_equal(simulator.global_params, np.full(simulator.spec.n_params, 2.0))

    def test_all_flagged_keeps_params(self):
        def fake_train(spec, params, shard, cfg, rng, client_id=0, **kwargs):
            return ClientUpdate(client_id=client_id, trained_params=params.copy(), n_examples=len(shard), flagged=True)

        simulator = self._simulator(fake_train)
        before = simulator.global_params.copy()
        record = simulator.run_rounds(1)[0]
        self.assertEqual(record.flagged_clients, 4)
        np.testing.assert_array_equal(simulator.global_params, before)

    def test_non_finite_aggregate(self):
        def fake_train(spec, params, shard, cfg, rng, client_id=0, **kwargs):
            return ClientUpdate(client_id=client_id, trained_params=np.full_like(params, np.inf), n_examples=len(shard))

        with self.assertRaises(NumericError):
            self._simulator(fake_train).run_rounds(1)


class TestCommandLine(unittest.TestCase):
    """End-to-end runs of the fedreg command."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.minimal = os.path.join(MOCK_DIR, "minimal.toml")

    def tearDown(self):
        self.tmp.cleanup()

    def _out(self, name: str) -> str:
        return os.path.join(self.tmp.name, name)

    def _read(self, path: str) -> bytes:
        with open(path, "rb") as f:
            return f.read()

    def _run(self, name: str, *extra: str) -> str:
        out = self._out(name)
        self.assertEqual(main(["run", "--config", self.minimal, "--out", out, "--quiet", *extra]), EXIT_OK)
        return out

    def test_run_outputs(self):
        out = self._run("a")
        for name in ("config.echo.toml", "rounds.csv", "summary.json"):
            self.assertTrue(os.path.exists(os.path.join(out, name)), name)
        frame = pd.read_csv(os.path.join(out, "rounds.csv"))
        self.assertEqual(list(frame["round"]), [1, 2])
        self.assertEqual(list(frame.columns[:3]), ["round", "accuracy", "loss_prev"])
        self.assertIn("paired_increment", frame.columns)
        with open(os.path.join(out, "summary.json")) as f:
            summary = json.load(f)
        self.assertEqual(summary["algorithm"], "fedavg")
        self.assertEqual(summary["seed"], 3)
        self.assertEqual(summary["rounds"], 2)

    def test_reruns_are_byte_identical(self):
        a = self._run("a")
        b = self._run("b", "--workers", "3")
        for name in ("config.echo.toml", "rounds.csv", "summary.json"):
            self.assertEqual(self._read(os.path.join(a, name)), self._read(os.path.join(b, name)), name)

    def test_seed_override(self):
        a = self._run("a")
        b = self._run("b", "--seed", "4")
        self.assertIn(b"seed = 4", self._read(os.path.join(b, "config.echo.toml")))
        self.assertNotEqual(self._read(os.path.join(a, "rounds.csv")), self._read(os.path.join(b, "rounds.csv")))

    def test_bad_config_exit_code(self):
        path = self._out("bad.toml")
        with open(path, "w") as f:
            f.write("[train.fedreg]\ngamma = 1.5\n")
        self.assertEqual(main(["run", "--config", path, "--out", self._out("x"), "--quiet"]), EXIT_CONFIG)
        self.assertEqual(main(["run", "--config", self._out("absent.toml"), "--quiet"]), EXIT_CONFIG)

    def test_attack(self):
        config = os.path.join(os.path.dirname(__file__), "..", "configs", "attack_toy.toml")
        out = self._out("attack")
        code = main(["attack", "--config", config, "--out", out, "--quiet", "--iterations", "1", "--targets", "2"])
        self.assertEqual(code, EXIT_OK)
        frame = pd.read_csv(os.path.join(out, "psnr.csv"))
        self.assertEqual(len(frame), 2)
        self.assertTrue((frame["psnr_db"] <= 99.0).all())
        for name in ("target_0_truth.pgm", "target_1_recon.pgm", "grid.pgm"):
            self.assertTrue(os.path.exists(os.path.join(out, name)), name)

    def test_attack_flags_reach_config(self):
        config = os.path.join(os.path.dirname(__file__), "..", "configs", "attack_toy.toml")
        out = self._out("attack_flags")
        args = ["attack", "--config", config, "--out", out, "--quiet", "--iterations", "1", "--targets", "1"]
        code = main(args + ["--defense", "fedreg-mg", "--attacker", "plain", "--train-rounds", "1"])
        self.assertEqual(code, EXIT_OK)
        with open(os.path.join(out, "config.echo.toml"), "rb") as f:
            echoed = tomllib.load(f)["attack"]
        self.assertEqual((echoed["defense"], echoed["attacker_model"], echoed["train_rounds"]), ("fedreg-mg", "plain", 1))

    def test_partition_stats(self):
        out = self._out("stats")
        self.assertEqual(main(["partition-stats", "--config", self.minimal, "--out", out]), EXIT_OK)
        frame = pd.read_csv(os.path.join(out, "partition.csv"))
        self.assertEqual(len(frame), 4)
        self.assertTrue((frame["classes"] == 1).all())

    def test_diagnose(self):
        rounds = os.path.join(self._run("a"), "rounds.csv")
        out = self._out("diag")
        self.assertEqual(main(["diagnose", rounds, "--reference", "0.5", "--fractions", "0.5", "1.0", "--out", out]), EXIT_OK)
        frame = pd.read_csv(os.path.join(out, "diagnose.csv"))
        self.assertEqual(list(frame.columns), ["name", "final_accuracy", "reference_accuracy", "R_0.5", "R_1.0"])
        self.assertEqual(frame["name"][0], "a")
        self.assertEqual(main(["diagnose", rounds, "--reference", rounds]), EXIT_OK)
        self.assertEqual(main(["diagnose", rounds, "--reference", "2.0"]), EXIT_CONFIG)
        self.assertEqual(main(["diagnose", self._out("missing.csv")]), EXIT_CONFIG)


class TestDisplay(unittest.TestCase):
    def test_tables_render(self):
        simulator = make_simulator()
        records = simulator.run_rounds()
        summary = summarize_run(records, None)
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            print_round_table(records, last=2)
            print_run_summary(summary)
            print_partition_stats(simulator.partition.sizes(), simulator.partition.class_counts(simulator.train), "one_class")
        text = buffer.getvalue()
        self.assertIn("classes per client: 1", text)
        self.assertIn("Final Accuracy", text)

    def test_format_missing_values(self):
        self.assertEqual(_fmt(None), "-")
        self.assertEqual(_fmt(float("nan")), "-")
        self.assertEqual(_fmt(0.5, ".2f"), "0.50")


if __name__ == "__main__":
    unittest.main()
