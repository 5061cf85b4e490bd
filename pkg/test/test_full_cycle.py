import json
import unittest

import test
from gsdsynth import common, dataset, dp_core, generate

from test import TEST_DATA_FILE, TEST_DIRECTORY, TEST_OUT_DIRECTORY, TEST_SCHEMA_FILE, run_command

OUTPUT_FILES = (
    common.SYNTHETIC_FILE_NAME,
    common.MANIFEST_FILE_NAME,
    common.WORKLOAD_MANIFEST_FILE_NAME,
    common.LEDGER_FILE_NAME,
    common.LEDGER_CHECKSUM_FILE_NAME,
    common.TRACE_FILE_NAME,
)


def generate_args(out=TEST_OUT_DIRECTORY, *extra):
    return (
        f"--data={TEST_DATA_FILE}",
        f"--schema={TEST_SCHEMA_FILE}",
        f"--out={out}",
        "--rows=8",
        "--generations=200",
        "--non-interactive",
        *extra,
    )


class MyTestCase(test.BaseTestCase):
    def test_one_shot_outputs(self):
        test.write_binary_files()
        result = run_command(
            "gsdsynth.generate", *generate_args(TEST_OUT_DIRECTORY, "--queries=cat-marginals:k=2", "--rho=0.5")
        )
        self.assertEqual(result.returncode, 0, result.stderr)
        for name in OUTPUT_FILES:
            self.assertTrue((TEST_OUT_DIRECTORY / name).exists(), name)
        self.assertIn("rho spent: 0.5 of 0.5, 0.0 left", result.stdout)
        self.assertIn("average error scale: privacy", result.stdout)
        ledger_path = TEST_OUT_DIRECTORY / common.LEDGER_FILE_NAME
        common.check_ledger_checksum(ledger_path, TEST_OUT_DIRECTORY / common.LEDGER_CHECKSUM_FILE_NAME)
        records = list(common.read_ledger_records(ledger_path))
        self.assertEqual([(r.label, r.rho) for r in records], [("measure one-shot", 0.5)])
        schema = dataset.load_schema(TEST_SCHEMA_FILE)
        synthetic, _ = dataset.load_csv(TEST_OUT_DIRECTORY / common.SYNTHETIC_FILE_NAME, schema)
        self.assertEqual(synthetic.n_rows, 8)
        manifest = json.loads((TEST_OUT_DIRECTORY / common.MANIFEST_FILE_NAME).read_text())
        self.assertEqual(manifest["schema_digest"], schema.digest())
        self.assertEqual(
            manifest["workload_manifest_digest"],
            common.get_file_checksum(TEST_OUT_DIRECTORY / common.WORKLOAD_MANIFEST_FILE_NAME),
        )
        self.assertEqual(manifest["ledger"]["delta"], 1 / 20 ** 2)
        trace_lines = (TEST_OUT_DIRECTORY / common.TRACE_FILE_NAME).read_text().splitlines()
        if trace_lines:
            self.assertEqual(json.loads(trace_lines[0])["epoch"], 1)

    def test_outputs_identical_for_any_worker_count(self):
        test.write_mixed_files(40)
        outputs = []
        for workers in (1, 4, 8):
            out = TEST_DIRECTORY / f"out_{workers}"
            result = run_command(
                "gsdsynth.generate",
                *generate_args(
                    out,
                    "--queries=cat-marginals:k=2+binary-tree:k=2,levels=3+prefixes:m=30+halfspaces:m=30",
                    "--rho=1",
                    "--mode=adaptive",
                    "--T=3",
                    "--S=2",
                    "--seed=11",
                    f"--workers={workers}",
                ),
            )
            self.assertEqual(result.returncode, 0, result.stderr)
            outputs.append({name: (out / name).read_bytes() for name in OUTPUT_FILES})
        for other in outputs[1:]:
            for name in OUTPUT_FILES:
                self.assertEqual(other[name], outputs[0][name], name)

    def test_missing_schema(self):
        test.write_binary_files()
        missing = TEST_DIRECTORY / "nothing.json"
        result = run_command(
            "gsdsynth.generate",
            f"--data={TEST_DATA_FILE}",
            f"--schema={missing}",
            "--queries=cat-marginals:k=2",
            "--rho=1",
            f"--out={TEST_OUT_DIRECTORY}",
        )
        self.assertEqual(result.returncode, common.EXIT_USAGE)
        self.assertIn(str(missing), result.stderr)
        self.assertFalse(TEST_OUT_DIRECTORY.exists())

    def test_usage_errors(self):
        test.write_binary_files()
        result = run_command("gsdsynth.generate", *generate_args(TEST_OUT_DIRECTORY, "--queries=cat-marginals"))
        self.assertEqual(result.returncode, common.EXIT_USAGE)
        result = run_command(
            "gsdsynth.generate", *generate_args(TEST_OUT_DIRECTORY, "--queries=cat-marginals", "--rho=1", "--mode=x")
        )
        self.assertEqual(result.returncode, common.EXIT_USAGE)
        self.assertIn("--mode", result.stderr)

    def test_runtime_failure_names_stage(self):
        test.write_binary_files()
        result = run_command(
            "gsdsynth.generate", *generate_args(TEST_OUT_DIRECTORY, "--queries=prefixes:m=5", "--rho=1")
        )
        self.assertEqual(result.returncode, common.EXIT_RUNTIME)
        self.assertIn("queries stage failed", result.stderr)

    def test_adaptive_ledger(self):
        test.write_binary_files()
        result = run_command(
            "gsdsynth.generate",
            *generate_args(
                TEST_OUT_DIRECTORY,
                "--queries=cat-marginals:k=2",
                "--rho=1",
                "--mode=adaptive",
                "--T=25",
                "--S=1",
                "--generations=5",
            ),
        )
        self.assertEqual(result.returncode, 0, result.stderr)
        records = list(common.read_ledger_records(TEST_OUT_DIRECTORY / common.LEDGER_FILE_NAME))
        self.assertEqual(len(records), 50)
        self.assertTrue(all(r.rho == 0.02 for r in records))
        self.assertAlmostEqual(records[-1].cumulative_rho, 1.0, places=12)
        manifest = json.loads((TEST_OUT_DIRECTORY / common.MANIFEST_FILE_NAME).read_text())
        self.assertEqual(len(manifest["epochs"]), 25)

    def test_epsilon_budget(self):
        test.write_binary_files()
        result = run_command(
            "gsdsynth.generate",
            *generate_args(TEST_OUT_DIRECTORY, "--queries=cat-marginals:k=2", "--epsilon=1", "--delta=1e-6"),
        )
        self.assertEqual(result.returncode, 0, result.stderr)
        manifest = json.loads((TEST_OUT_DIRECTORY / common.MANIFEST_FILE_NAME).read_text())
        self.assertEqual(manifest["ledger"]["total_rho"], dp_core.dp_to_zcdp(1.0, 1e-6))
        self.assertAlmostEqual(manifest["ledger"]["epsilon"], 1.0, places=9)

    def test_existing_output_declined(self):
        test.write_binary_files()
        TEST_OUT_DIRECTORY.mkdir()
        marker = TEST_OUT_DIRECTORY / "keep.txt"
        marker.write_text("keep")
        old = generate.yesno.input_until_bool
        generate.yesno.input_until_bool = lambda question: False
        try:
            status = generate.cmd_generate(
                [
                    f"--data={TEST_DATA_FILE}",
                    f"--schema={TEST_SCHEMA_FILE}",
                    "--queries=cat-marginals:k=2",
                    "--rho=1",
                    f"--out={TEST_OUT_DIRECTORY}",
                ]
            )
        finally:
            generate.yesno.input_until_bool = old
        self.assertEqual(status, common.EXIT_OK)
        self.assertEqual([p.name for p in TEST_OUT_DIRECTORY.iterdir()], ["keep.txt"])

    def test_evaluate_spec_and_manifest_agree(self):
        test.write_mixed_files(40)
        spec = "cat-marginals:k=2+prefixes:m=20"
        result = run_command("gsdsynth.generate", *generate_args(TEST_OUT_DIRECTORY, f"--queries={spec}", "--rho=2"))
        self.assertEqual(result.returncode, 0, result.stderr)
        common_args = (
            f"--original={TEST_DATA_FILE}",
            f"--synthetic={TEST_OUT_DIRECTORY / common.SYNTHETIC_FILE_NAME}",
            f"--schema={TEST_SCHEMA_FILE}",
            "--per-workload",
        )
        from_spec = run_command("gsdsynth.evaluate", *common_args, f"--queries={spec}")
        from_manifest = run_command(
            "gsdsynth.evaluate",
            *common_args,
            f"--workload-manifest={TEST_OUT_DIRECTORY / common.WORKLOAD_MANIFEST_FILE_NAME}",
        )
        self.assertEqual(from_spec.returncode, 0, from_spec.stderr)
        self.assertEqual(from_manifest.returncode, 0, from_manifest.stderr)
        self.assertEqual(from_spec.stdout, from_manifest.stdout)
        self.assertIn("max error: ", from_spec.stdout)
        self.assertIn("average error: ", from_spec.stdout)
        self.assertIn("cat:color,flag\t", from_spec.stdout)

    def test_evaluate_malformed_manifest(self):
        test.write_binary_files()
        manifest = TEST_DIRECTORY / "workloads.json"
        manifest.write_text(
            json.dumps(
                {
                    "workloads": [
                        {
                            "name": "cat:c0",
                            "kind": "categorical-marginal",
                            "l2_sensitivity": 1.4,
                            "queries": [{"type": "categorical_marginal", "features": ["c0"], "values": [5]}],
                        }
                    ]
                }
            )
        )
        result = run_command(
            "gsdsynth.evaluate",
            f"--original={TEST_DATA_FILE}",
            f"--synthetic={TEST_DATA_FILE}",
            f"--schema={TEST_SCHEMA_FILE}",
            f"--workload-manifest={manifest}",
        )
        self.assertEqual(result.returncode, common.EXIT_RUNTIME)
        self.assertIn("workloads[0].queries[0]", result.stderr)

    def test_demo_sigmoid(self):
        result = run_command("gsdsynth.demo_sigmoid", "--n=20", "--lr=0", "--max-steps=5")
        self.assertEqual(result.returncode, 0, result.stderr)
        lines = result.stdout.splitlines()
        self.assertEqual(
            lines[-2],
            "annealed: surrogate loss 0.0, true prefix error 0.5, displacement from initialization 0.0",
        )
        self.assertTrue(lines[-1].startswith("gsd: true prefix error "))
        self.assertEqual(lines[0], "0\t0.0")

    def test_demo_sigmoid_trace_file(self):
        trace = TEST_DIRECTORY / "trace.tsv"
        result = run_command("gsdsynth.demo_sigmoid", "--n=10", "--temps=2,4,8", f"--trace={trace}")
        self.assertEqual(result.returncode, 0, result.stderr)
        self.assertEqual(trace.read_text().splitlines(), ["0\t0.0", "1\t0.0", "2\t0.0"])
        result = run_command("gsdsynth.demo_sigmoid", "--temps=2,x")
        self.assertEqual(result.returncode, common.EXIT_USAGE)


if __name__ == "__main__":
    unittest.main()
