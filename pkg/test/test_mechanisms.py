import json
import unittest

import numpy as np

import test
from gsdsynth import common, dataset, dp_core, evalkit, gsd, mechanisms, queries
from gsdsynth.dataset import Dataset
from gsdsynth.gsd import GsdConfig
from gsdsynth.mechanisms import AdaptiveOptions

from test import TEST_DIRECTORY


class SentinelDataset(Dataset):
    """Counts every read of the table."""

    def __init__(self, schema, values):
        self.accesses = 0
        super().__init__(schema, values)

    @property
    def values(self):
        self.accesses += 1
        return super().values


def _benchmark():
    D = test.fixed_dataset()
    return D, queries.gen_categorical_marginal_workloads(D.schema, 2)


def _quick(seed=0, rows=4, generations=20):
    return GsdConfig(synthetic_rows=rows, max_generations=generations, seed=seed)


class OneShotTestCase(unittest.TestCase):
    def test_ledger_spends_exactly_rho(self):
        D, W = _benchmark()
        report = mechanisms.run_one_shot(D, W, 0.5, _quick())
        self.assertEqual(report.ledger.spent_rho, 0.5)
        self.assertEqual([e.label for e in report.ledger.entries], ["measure one-shot"])
        self.assertEqual(len(report.measurements), 3)
        for m in report.measurements:
            self.assertTrue(np.all((m.noisy_answers >= 0) & (m.noisy_answers <= 1)))
            self.assertEqual(m.rho_spent, 0.5)
        self.assertEqual(report.mode, "oneshot")
        self.assertEqual(len(report.epochs), 1)

    def test_combined_sensitivity(self):
        D, W = _benchmark()
        report = mechanisms.run_one_shot(D, W, 2.0, _quick())
        expected = np.sqrt(3 * 2) / D.n_rows * np.sqrt(1 / 4.0)
        self.assertAlmostEqual(report.measurements[0].sigma, expected)

    def test_same_seed_same_output(self):
        D, W = _benchmark()
        first, ledger = mechanisms.one_shot(D, W, 1.0, _quick(seed=5))
        second, _ = mechanisms.one_shot(D, W, 1.0, _quick(seed=5))
        self.assertTrue(first.equals(second))
        self.assertEqual(ledger.spent_rho, 1.0)

    def test_huge_budget_matches_oracle(self):
        D, W = _benchmark()
        a_hat = queries.eval_workloads(W, D)
        _, optimum = evalkit.brute_force_projection(D.schema, 4, W, a_hat)
        close = 0
        for seed in range(5):
            synthetic, _ = mechanisms.one_shot(D, W, 1e8, _quick(seed, generations=50000))
            if evalkit.max_error(W, D, synthetic) <= np.sqrt(optimum) + 0.02:
                close += 1
        self.assertGreaterEqual(close, 4)

    def test_rejects_bad_inputs(self):
        D, W = _benchmark()
        self.assertRaises(common.ParameterError, mechanisms.one_shot, D, W, 0.0, _quick())
        self.assertRaises(common.ParameterError, mechanisms.one_shot, D, [], 1.0, _quick())

    def test_projection_never_reads_sensitive_data(self):
        D, W = _benchmark()
        sentinel = SentinelDataset(D.schema, D.values)
        self._check_projection_isolated(
            sentinel, lambda: mechanisms.run_one_shot(sentinel, W, 1.0, _quick())
        )
        self._check_projection_isolated(
            sentinel, lambda: mechanisms.run_adaptive(sentinel, W, 1.0, 3, 2, _quick())
        )

    def _check_projection_isolated(self, sentinel, mechanism):
        original = gsd.evolve
        calls = []

        def watched(*args, **kwargs):
            before = sentinel.accesses
            result = original(*args, **kwargs)
            self.assertEqual(sentinel.accesses, before)
            self.assertFalse(any(a is sentinel for a in list(args) + list(kwargs.values())))
            calls.append(before)
            return result

        gsd.evolve = watched
        try:
            mechanism()
        finally:
            gsd.evolve = original
        self.assertTrue(calls)
        self.assertGreater(sentinel.accesses, 0)


class AdaptiveTestCase(unittest.TestCase):
    def test_budget_split(self):
        D, W = _benchmark()
        report = mechanisms.run_adaptive(D, W, 1.0, 25, 1, _quick(generations=5))
        rhos = [e.rho for e in report.ledger.entries]
        self.assertEqual(len(rhos), 50)
        self.assertTrue(all(r == 0.02 for r in rhos))
        self.assertAlmostEqual(report.ledger.spent_rho, 1.0, places=12)
        self.assertEqual(report.ledger.entries[0].label, "select t=1/s=1")
        self.assertEqual(report.ledger.entries[-1].label, "measure t=25/s=1")
        self.assertEqual(len(report.epochs), 25)
        self.assertEqual(len(report.measurements), 25)

    def test_selection_is_charged_before_noisy_max_runs(self):
        D, W = _benchmark()
        events = []
        spend = dp_core.PrivacyLedger.spend
        noisy_max = dp_core.report_noisy_max

        def recording_spend(ledger, label, rho):
            events.append(label)
            return spend(ledger, label, rho)

        def recording_noisy_max(*args):
            events.append("noisy max")
            return noisy_max(*args)

        dp_core.PrivacyLedger.spend = recording_spend
        dp_core.report_noisy_max = recording_noisy_max
        try:
            mechanisms.run_adaptive(D, W, 1.0, 2, 1, _quick(generations=2))
        finally:
            dp_core.PrivacyLedger.spend = spend
            dp_core.report_noisy_max = noisy_max
        self.assertEqual(
            events,
            [
                "select t=1/s=1", "noisy max", "measure t=1/s=1",
                "select t=2/s=1", "noisy max", "measure t=2/s=1",
            ],
        )

    def test_single_workload_single_epoch(self):
        D, W = _benchmark()
        report = mechanisms.run_adaptive(D, W[:1], 0.5, 1, 1, _quick())
        self.assertEqual(len(report.measurements), 1)
        m = report.measurements[0]
        self.assertEqual(m.workload_id, 0)
        self.assertEqual(m.rho_spent, 0.25)
        self.assertAlmostEqual(m.sigma, np.sqrt(2) / 4 * np.sqrt(1 / 0.5))
        self.assertEqual(report.epochs[0].selected, ("cat:c0,c1",))

    def test_samples_per_epoch(self):
        D, W = _benchmark()
        report = mechanisms.run_adaptive(D, W, 0.3, 2, 3, _quick())
        self.assertEqual(len(report.ledger.entries), 12)
        self.assertEqual([m.sample for m in report.measurements], [1, 2, 3, 1, 2, 3])
        self.assertEqual([m.epoch for m in report.measurements], [1, 1, 1, 2, 2, 2])
        self.assertAlmostEqual(report.ledger.spent_rho, 0.3, places=12)

    def test_reselection_rules(self):
        D, W = _benchmark()
        concatenated = mechanisms.run_adaptive(D, W[:1], 1.0, 4, 1, _quick())
        self.assertEqual(len(concatenated.measurements), 4)
        replaced = mechanisms.run_adaptive(
            D, W[:1], 1.0, 4, 1, _quick(), AdaptiveOptions(on_reselect="replace")
        )
        self.assertEqual(len(replaced.measurements), 1)
        self.assertEqual(replaced.measurements[0].epoch, 4)

    def test_query_selection_unit(self):
        D, W = _benchmark()
        report = mechanisms.run_adaptive(
            D, W, 1.0, 3, 2, _quick(), AdaptiveOptions(select_unit="query", warm_start=False)
        )
        self.assertEqual(len(report.measurements), 6)
        for m in report.measurements:
            self.assertEqual(len(m.query_indices), 1)
            self.assertEqual(m.noisy_answers.shape, (1,))
        self.assertRaises(common.ParameterError, AdaptiveOptions, "row")
        self.assertRaises(common.ParameterError, AdaptiveOptions, "workload", "merge")

    def test_selects_true_argmax_with_huge_budget(self):
        schema = test.mixed_schema()
        D = test.random_mixed_dataset(200, seed=7)
        W = queries.gen_categorical_marginal_workloads(schema, 1) + queries.gen_binary_tree_workloads(
            schema, 2, levels=2
        )[:1]
        checked = 0
        for seed in range(10):
            config = GsdConfig(synthetic_rows=10, max_generations=0, seed=seed)
            init = dataset.random_dataset(
                schema, 10, np.random.default_rng([seed, mechanisms._INIT_STREAM])
            )
            truth = queries.eval_workloads(W, D)
            guess = queries.eval_workloads(W, init)
            scores = []
            start = 0
            for w in W:
                scores.append(float(np.max(np.abs(truth[start:start + len(w)] - guess[start:start + len(w)]))))
                start += len(w)
            ranked = sorted(scores, reverse=True)
            if ranked[0] - ranked[1] < 1e-9:
                continue
            report = mechanisms.run_adaptive(D, W, 1e8, 1, 1, config)
            self.assertEqual(report.epochs[0].selected, (W[int(np.argmax(scores))].name,))
            checked += 1
        self.assertGreater(checked, 0)

    def test_huge_budget_reaches_benchmark(self):
        D, W = _benchmark()
        close = 0
        for seed in range(5):
            synthetic, ledger = mechanisms.adaptive(D, W, 1e8, 5, 1, _quick(seed, generations=50000))
            self.assertEqual(len(ledger.entries), 10)
            if evalkit.max_error(W, D, synthetic) <= 0.02:
                close += 1
        self.assertGreaterEqual(close, 4)

    def test_trace_records_carry_epoch(self):
        D, W = _benchmark()
        records = []
        mechanisms.run_adaptive(
            D, W, 1.0, 2, 1, GsdConfig(synthetic_rows=4, max_generations=3, seed=0, early_stop_window=100),
            trace=records.append,
        )
        self.assertTrue(records)
        self.assertTrue({r["epoch"] for r in records} <= {1, 2})
        self.assertIn("best_loss", records[0])


class ManifestTestCase(test.BaseTestCase):
    def test_manifest_ignores_worker_count(self):
        D, W = _benchmark()
        digests = []
        for workers in (1, 4):
            config = GsdConfig(synthetic_rows=4, max_generations=10, seed=2, workers=workers)
            report = mechanisms.run_adaptive(D, W, 1.0, 2, 1, config)
            path = TEST_DIRECTORY / f"manifest_{workers}.json"
            digests.append(mechanisms.write_run_manifest(report, D.schema, path, "abc", {"rows": 4}))
        self.assertEqual(digests[0], digests[1])
        document = json.loads(path.read_text())
        self.assertEqual(document["mode"], "adaptive")
        self.assertEqual(document["seed"], 2)
        self.assertEqual(document["schema_digest"], D.schema.digest())
        self.assertEqual(document["workload_manifest_digest"], "abc")
        self.assertNotIn("workers", document["config"])
        self.assertEqual(len(document["ledger"]["entries"]), 4)
        self.assertEqual([e["epoch"] for e in document["epochs"]], [1, 2])
        self.assertEqual(document["rows"], 4)
        self.assertEqual(digests[0], common.get_file_checksum(path))


if __name__ == "__main__":
    unittest.main()
