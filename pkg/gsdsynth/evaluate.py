"""Compare a synthetic dataset with the original on a query workload

Usage:
  gsdsynth-eval --original=PATH --synthetic=PATH --schema=PATH
                (--queries=SPEC | --workload-manifest=PATH) [--seed=INT]
                [--per-workload] [--workers=W] [--no-normalize]
  gsdsynth-eval -h | --help

Options:
  -h --help                 Show this screen.
  --original=PATH           Sensitive CSV file.
  --synthetic=PATH          Synthetic CSV file written by gsdsynth-generate.
  --schema=PATH             JSON schema shared by both files.
  --queries=SPEC            Workload spec, as for gsdsynth-generate.
  --workload-manifest=PATH  Workload manifest archived by gsdsynth-generate.
  --seed=INT                Seed used to draw random workloads [default: 0].
  --per-workload            Print one line of errors per workload.
  --workers=W               Evaluation threads, $GSD_WORKERS or the physical core count
                            when omitted.
  --no-normalize            Numeric columns are already in [0, 1].
"""
import pathlib
import sys

import numpy as np
from docopt import docopt, DocoptExit

from gsdsynth import common, dataset, evalkit, queries
from gsdsynth.common import GSDError, UsageError


def cmd_eval(argv=None) -> int:
    common.setup_logging()
    try:
        arguments = docopt(__doc__, argv=argv)
    except DocoptExit as err:
        return common.error(str(err), common.EXIT_USAGE)
    paths = {
        "schema": pathlib.Path(arguments["--schema"]),
        "original": pathlib.Path(arguments["--original"]),
        "synthetic": pathlib.Path(arguments["--synthetic"]),
    }
    if arguments["--workload-manifest"]:
        paths["manifest"] = pathlib.Path(arguments["--workload-manifest"])
    try:
        for path in paths.values():
            common.file_ok(path)
        try:
            seed = int(arguments["--seed"])
            workers = int(arguments["--workers"]) if arguments["--workers"] else common.default_workers()
        except ValueError as err:
            raise UsageError(f"--seed and --workers expect integers: {err}") from err
    except GSDError as err:
        return common.error(common.describe(err), common.EXIT_USAGE)

    stage = "schema"
    try:
        schema = dataset.load_schema(paths["schema"])
        stage = "data"
        normalize = not arguments["--no-normalize"]
        original, ranges = dataset.load_csv(paths["original"], schema, normalize)
        synthetic, _ = dataset.load_csv(paths["synthetic"], schema, normalize, ranges)
        stage = "queries"
        if "manifest" in paths:
            workloads = queries.load_workload_manifest(paths["manifest"], schema)
        else:
            rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, common.QUERY_SEED_STREAM])
            workloads = queries.parse_query_spec(arguments["--queries"], schema, rng)
        stage = "evaluation"
        table = evalkit.per_workload_errors(workloads, original, synthetic, workers)
        max_error = evalkit.max_error(workloads, original, synthetic, workers)
        avg_error = evalkit.avg_error(workloads, original, synthetic, workers)
    except (GSDError, OSError) as err:
        return common.error(f"{stage} stage failed: {common.describe(err)}", common.EXIT_RUNTIME)
    if arguments["--per-workload"]:
        for row in table:
            print(f"{row.name}\t{row.max_error:.9g}\t{row.avg_error:.9g}")
    print(f"max error: {max_error:.9g}")
    print(f"average error: {avg_error:.9g}")
    return common.EXIT_OK


def run():
    sys.exit(cmd_eval())


if __name__ == "__main__":
    run()
