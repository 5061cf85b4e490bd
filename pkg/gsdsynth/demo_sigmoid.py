"""Show sigmoid annealing stuck at zero surrogate loss next to the genetic optimizer

Usage:
  gsdsynth-demo-sigmoid [--n=N] [--temps=LIST] [--lr=LR] [--max-steps=S] [--seed=INT]
                        [--trace=PATH]
  gsdsynth-demo-sigmoid -h | --help

Options:
  -h --help        Show this screen.
  --n=N            Rows in the original and synthetic datasets [default: 100].
  --temps=LIST     Comma separated inverse temperatures, doubling from 2 to 2048 when omitted.
  --lr=LR          Gradient descent learning rate [default: 0.01].
  --max-steps=S    Steps per temperature [default: 1000].
  --seed=INT       Seed of the genetic optimizer [default: 0].
  --trace=PATH     Write the step and loss trace here instead of stdout.
"""
import pathlib
import sys

from docopt import docopt, DocoptExit

from gsdsynth import common, sigmoid_demo
from gsdsynth.common import GSDError, UsageError


def _arguments(arguments):
    try:
        temps = None
        if arguments["--temps"]:
            temps = [float(t) for t in arguments["--temps"].split(",")]
        return (
            int(arguments["--n"]),
            temps,
            float(arguments["--lr"]),
            int(arguments["--max-steps"]),
            int(arguments["--seed"]),
        )
    except ValueError as err:
        raise UsageError(f"Malformed flag value: {err}") from err


def cmd_demo_sigmoid(argv=None) -> int:
    common.setup_logging()
    try:
        arguments = docopt(__doc__, argv=argv)
    except DocoptExit as err:
        return common.error(str(err), common.EXIT_USAGE)
    try:
        n, temps, lr, max_steps, seed = _arguments(arguments)
        summary = sigmoid_demo.run_demo(n, temps, lr, seed, max_steps)
    except UsageError as err:
        return common.error(common.describe(err), common.EXIT_USAGE)
    except GSDError as err:
        return common.error(f"demo failed: {common.describe(err)}", common.EXIT_RUNTIME)
    lines = [f"{i}\t{step.loss!r}" for i, step in enumerate(summary.trace)]
    if arguments["--trace"]:
        try:
            pathlib.Path(arguments["--trace"]).write_text("\n".join(lines) + "\n")
        except OSError as err:
            return common.error(f"write stage failed: {err}", common.EXIT_RUNTIME)
    else:
        print("\n".join(lines))
    print(
        f"annealed: surrogate loss {summary.annealed_surrogate_loss!r}, "
        f"true prefix error {summary.annealed_true_error!r}, "
        f"displacement from initialization {summary.displacement!r}"
    )
    print(f"gsd: true prefix error {summary.gsd_true_error!r}")
    return common.EXIT_OK


def run():
    sys.exit(cmd_demo_sigmoid())


if __name__ == "__main__":
    run()
