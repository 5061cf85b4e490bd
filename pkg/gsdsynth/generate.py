"""Generate a differentially private synthetic dataset

Usage:
  gsdsynth-generate --data=PATH --schema=PATH --queries=SPEC --out=DIR (--rho=R | --epsilon=E)
                    [--delta=D] [--mode=MODE] [--T=T] [--S=S] [--seed=INT]
                    [--rows=N] [--generations=G] [--p-mut=P] [--p-cross=P] [--elite=E]
                    [--mutation-rate=R] [--crossover-rate=R] [--early-stop-threshold=X]
                    [--early-stop-window=W] [--operator-mode=MODE] [--crossover-unit=UNIT]
                    [--select-unit=UNIT] [--on-reselect=RULE] [--workers=W] [--no-normalize]
                    [--non-interactive]
  gsdsynth-generate -h | --help

Options:
  -h --help                 Show this screen.
  --data=PATH               Sensitive CSV file with a header row.
  --schema=PATH             JSON schema describing the CSV columns.
  --queries=SPEC            Workloads, e.g. cat-marginals:k=2 or binary-tree:k=2,levels=5
                            or prefixes:m=50000 or halfspaces:m=200000, joined with +.
  --out=DIR                 Output directory.
  --rho=R                   Total zCDP budget.
  --epsilon=E               Total budget as epsilon, converted to rho using --delta.
  --delta=D                 Delta for reporting and conversion, 1/N^2 when omitted.
  --mode=MODE               oneshot or adaptive [default: oneshot].
  --T=T                     Adaptive epochs [default: 10].
  --S=S                     Adaptive selections per epoch [default: 1].
  --seed=INT                Master seed [default: 0].
  --rows=N                  Synthetic rows [default: 1000].
  --generations=G           Maximum generations per projection [default: 100000].
  --p-mut=P                 Mutation candidates per generation [default: 100].
  --p-cross=P               Crossover candidates per generation [default: 100].
  --elite=E                 Elite set size [default: 2].
  --mutation-rate=R         Cells changed by a mutation [default: 1].
  --crossover-rate=R        Rows or cells copied by a crossover [default: 1].
  --early-stop-threshold=X  Relative improvement that keeps the search going [default: 0.0001].
  --early-stop-window=W     Generations compared by the early stop rule, --rows when omitted.
  --operator-mode=MODE      incumbent or elite_pairs [default: incumbent].
  --crossover-unit=UNIT     row or entry [default: row].
  --select-unit=UNIT        Adaptive selection over workload or query [default: workload].
  --on-reselect=RULE        concatenate or replace measurements [default: concatenate].
  --workers=W               Evaluation threads, $GSD_WORKERS or the physical core count
                            when omitted.
  --no-normalize            Numeric columns are already in [0, 1].
  --non-interactive         Overwrite the output directory without asking.
"""
import datetime
import json
import pathlib
import sys

import numpy as np
import yesno
from docopt import docopt, DocoptExit

from gsdsynth import common, dataset, dp_core, evalkit, gsd, mechanisms, queries
from gsdsynth.common import GSDError, UsageError


def _number(arguments, flag, kind, default=None):
    raw = arguments[flag]
    if raw is None:
        return default
    try:
        return kind(raw)
    except ValueError:
        raise UsageError(f"{flag} expects a number, got {raw!r}")


def _gsd_config(arguments, workers: int) -> gsd.GsdConfig:
    return gsd.GsdConfig(
        synthetic_rows=_number(arguments, "--rows", int),
        max_generations=_number(arguments, "--generations", int),
        p_mut=_number(arguments, "--p-mut", int),
        p_cross=_number(arguments, "--p-cross", int),
        elite=_number(arguments, "--elite", int),
        mutation_rate=_number(arguments, "--mutation-rate", int),
        crossover_rate=_number(arguments, "--crossover-rate", int),
        early_stop_threshold=_number(arguments, "--early-stop-threshold", float),
        early_stop_window=_number(arguments, "--early-stop-window", int),
        seed=_number(arguments, "--seed", int),
        operator_mode=arguments["--operator-mode"],
        crossover_unit=arguments["--crossover-unit"],
        workers=workers,
    )


def _prepare_output(out: pathlib.Path, non_interactive: bool) -> bool:
    if out.exists():
        if not out.is_dir():
            raise GSDError(f"{out} exists and is not a directory")
        if not (non_interactive or common.DEBUG) and not yesno.input_until_bool(
            f"The directory {out} already exists. Overwrite its contents?"
        ):
            return False
    else:
        common.file_ok(out, source=False)
        out.mkdir()
    return True


def cmd_generate(argv=None) -> int:
    common.setup_logging()
    try:
        arguments = docopt(__doc__, argv=argv)
    except DocoptExit as err:
        return common.error(str(err), common.EXIT_USAGE)
    data_path = pathlib.Path(arguments["--data"])
    schema_path = pathlib.Path(arguments["--schema"])
    out = pathlib.Path(arguments["--out"])
    try:
        common.file_ok(schema_path)
        common.file_ok(data_path)
        mode = arguments["--mode"]
        if mode not in ("oneshot", "adaptive"):
            raise UsageError(f"--mode must be oneshot or adaptive, got {mode!r}")
        workers = _number(arguments, "--workers", int)
        if workers is None:
            workers = common.default_workers()
        config = _gsd_config(arguments, workers)
        options = mechanisms.AdaptiveOptions(arguments["--select-unit"], arguments["--on-reselect"])
        epochs_T = _number(arguments, "--T", int)
        samples_S = _number(arguments, "--S", int)
        rho = _number(arguments, "--rho", float)
        epsilon = _number(arguments, "--epsilon", float)
        delta = _number(arguments, "--delta", float)
    except GSDError as err:
        return common.error(common.describe(err), common.EXIT_USAGE)

    stage = "schema"
    try:
        schema = dataset.load_schema(schema_path)
        stage = "data"
        print("Loading", data_path, datetime.datetime.now())
        sensitive, ranges = dataset.load_csv(data_path, schema, not arguments["--no-normalize"])
        stage = "queries"
        rng = np.random.default_rng([config.seed & 0xFFFFFFFFFFFFFFFF, common.QUERY_SEED_STREAM])
        workloads = queries.parse_query_spec(arguments["--queries"], schema, rng)
        stage = "budget"
        if delta is None:
            delta = 1 / sensitive.n_rows ** 2
        if rho is None:
            rho = dp_core.dp_to_zcdp(epsilon, delta)
        stage = "output"
        if not _prepare_output(out, arguments["--non-interactive"]):
            print("Nothing written.")
            return common.EXIT_OK
        trace_path = out / common.TRACE_FILE_NAME
        stage = "mechanism"
        print(
            f"Running {mode} mechanism on {sensitive.n_rows} rows, "
            f"{sum(len(w) for w in workloads)} queries in {len(workloads)} workloads",
            datetime.datetime.now(),
        )
        with trace_path.open("w", encoding="utf-8") as trace_file:

            def trace(record):
                trace_file.write(json.dumps(record, sort_keys=True) + "\n")

            if mode == "oneshot":
                report = mechanisms.run_one_shot(sensitive, workloads, rho, config, delta, trace)
            else:
                report = mechanisms.run_adaptive(
                    sensitive, workloads, rho, epochs_T, samples_S, config, options, delta, trace
                )
        print("Mechanism finished", datetime.datetime.now())
        stage = "write"
        dataset.save_csv(report.synthetic, out / common.SYNTHETIC_FILE_NAME, ranges)
        workload_digest = queries.save_workload_manifest(
            workloads, schema, out / common.WORKLOAD_MANIFEST_FILE_NAME
        )
        common.write_ledger_records(
            report.ledger.records(),
            out / common.LEDGER_FILE_NAME,
            out / common.LEDGER_CHECKSUM_FILE_NAME,
        )
        mechanisms.write_run_manifest(
            report,
            schema,
            out / common.MANIFEST_FILE_NAME,
            workload_digest,
            {"queries": arguments["--queries"], "rows": sensitive.n_rows},
        )
    except (GSDError, OSError) as err:
        return common.error(f"{stage} stage failed: {common.describe(err)}", common.EXIT_RUNTIME)
    ledger = report.ledger
    print(f"rho spent: {ledger.spent_rho!r} of {ledger.total_rho!r}, {ledger.remaining_rho!r} left")
    print(f"({ledger.epsilon():.6g}, {ledger.delta:.6g})-DP")
    m = sum(len(w) for w in workloads)
    if not schema.numeric_indices and m:
        privacy, sampling = evalkit.accuracy_bound_terms(
            sensitive.n_rows, config.synthetic_rows, m, schema.domain_size, ledger.epsilon(), ledger.delta
        )
        print(f"average error scale: privacy {privacy:.3g}, sampling {sampling:.3g}")
    print("Synthetic data written to", out / common.SYNTHETIC_FILE_NAME)
    return common.EXIT_OK


def run():
    sys.exit(cmd_generate())


if __name__ == "__main__":
    run()
