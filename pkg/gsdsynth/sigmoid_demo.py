"""First-order annealing on a sigmoid-smoothed prefix query, and where it gets stuck.

A single prefix query over one numeric column is replaced by a sigmoid of
increasing inverse temperature and optimized with plain gradient descent.
Starting from every row at the threshold, the surrogate loss is already
zero while the true query is off by one half. The genetic optimizer, which
evaluates the true query, does not share the problem.
"""
import dataclasses
import logging
import typing

import numpy as np
from scipy.special import expit

from gsdsynth import gsd
from gsdsynth.common import ParameterError
from gsdsynth.dataset import Attribute, Dataset, DomainSchema
from gsdsynth.queries import Prefix, Workload

log = logging.getLogger(__name__)

DEFAULT_SIGMA = 2.0
DEFAULT_STAGES = 11
DEFAULT_LEARNING_RATE = 0.01
DEFAULT_MAX_STEPS = 1000
DEFAULT_TOLERANCE = 1e-6
DEMO_SCHEMA = DomainSchema((Attribute.numeric("x"),))


@dataclasses.dataclass(frozen=True)
class SigmoidPrefix:
    threshold: float = 0.5
    inverse_temperature: float = DEFAULT_SIGMA

    def __post_init__(self):
        if not 0 <= self.threshold <= 1:
            raise ParameterError(f"threshold must be in [0, 1], got {self.threshold}")
        if not self.inverse_temperature >= 0:
            raise ParameterError("inverse_temperature must not be negative")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return expit(self.inverse_temperature * (np.asarray(x, dtype=np.float64) - self.threshold))


@dataclasses.dataclass(frozen=True)
class AnnealStep:
    stage: int
    sigma: float
    step: int
    loss: float


@dataclasses.dataclass(frozen=True)
class DemoSummary:
    target: float
    annealed: Dataset
    annealed_surrogate_loss: float
    annealed_true_error: float
    gsd_result: Dataset
    gsd_true_error: float
    trace: typing.Tuple[AnnealStep, ...]
    displacement: float


def _column(D) -> np.ndarray:
    if isinstance(D, Dataset):
        if D.schema.n_attributes != 1 or D.schema.attributes[0].is_categorical:
            raise ParameterError("Expected a dataset with a single numeric column")
        return D.values[:, 0]
    return np.asarray(D, dtype=np.float64).reshape(-1)


def sigmoid_query(D, sp: SigmoidPrefix) -> float:
    return float(np.mean(sp(_column(D))))


def prefix_query(D, tau: float) -> float:
    """Fraction of rows at or below tau."""
    return float(np.mean(_column(D) <= tau))


def surrogate_loss(x: np.ndarray, sp: SigmoidPrefix, target: float) -> float:
    return (float(np.mean(sp(x))) - target) ** 2


def sigmoid_gradient(x: np.ndarray, sp: SigmoidPrefix, target: float) -> np.ndarray:
    """Gradient of the surrogate loss with respect to every row value."""
    x = np.asarray(x, dtype=np.float64)
    f = sp(x)
    residual = float(np.mean(f)) - target
    return 2 * residual * sp.inverse_temperature * f * (1 - f) / x.shape[0]


def doubling_schedule(sigma_1: float = DEFAULT_SIGMA, stages: int = DEFAULT_STAGES) -> typing.List[float]:
    if sigma_1 <= 0 or stages < 1:
        raise ParameterError("sigma_1 must be positive and stages at least 1")
    return [sigma_1 * 2 ** j for j in range(stages)]


def anneal_descent(
    target_answer: float,
    n_prime: int,
    temps: typing.Sequence[float],
    learning_rate: float = DEFAULT_LEARNING_RATE,
    max_steps: int = DEFAULT_MAX_STEPS,
    init: typing.Optional[Dataset] = None,
    threshold: float = 0.5,
    tolerance: float = DEFAULT_TOLERANCE,
) -> typing.Tuple[Dataset, typing.List[AnnealStep]]:
    if not temps:
        raise ParameterError("At least one temperature is required")
    if learning_rate < 0 or max_steps < 1:
        raise ParameterError("learning_rate must not be negative and max_steps must be positive")
    if init is None:
        init = Dataset(DEMO_SCHEMA, np.full((n_prime, 1), 0.5))
    elif init.n_rows != n_prime:
        raise ParameterError(f"init has {init.n_rows} rows, expected {n_prime}")
    x = _column(init).copy()
    trace = []
    for stage, sigma in enumerate(temps, start=1):
        sp = SigmoidPrefix(threshold, sigma)
        for step in range(max_steps):
            trace.append(AnnealStep(stage, sigma, step, surrogate_loss(x, sp, target_answer)))
            gradient = sigmoid_gradient(x, sp, target_answer)
            if np.linalg.norm(gradient) <= tolerance:
                break
            x = np.clip(x - learning_rate * gradient, 0.0, 1.0)
        log.debug("stage %d (sigma=%g): %d steps", stage, sigma, step + 1)
    return Dataset(init.schema, x.reshape(-1, 1)), trace


def run_demo(
    n: int = 100,
    temps: typing.Optional[typing.Sequence[float]] = None,
    lr: float = DEFAULT_LEARNING_RATE,
    seed: int = 0,
    max_steps: int = DEFAULT_MAX_STEPS,
    gsd_config: typing.Optional[gsd.GsdConfig] = None,
) -> DemoSummary:
    """Half the rows at 0 and half at 1, one prefix query at 0.5."""
    if n < 2:
        raise ParameterError(f"n must be at least 2, got {n}")
    temps = list(temps) if temps is not None else doubling_schedule()
    original = Dataset(DEMO_SCHEMA, np.repeat([0.0, 1.0], [n // 2, n - n // 2]).reshape(-1, 1))
    target = prefix_query(original, 0.5)
    init = Dataset(DEMO_SCHEMA, np.full((n, 1), 0.5))
    annealed, trace = anneal_descent(target, n, temps, lr, max_steps, init)
    surrogate = surrogate_loss(_column(annealed), SigmoidPrefix(0.5, temps[-1]), target)
    if gsd_config is None:
        gsd_config = gsd.GsdConfig(synthetic_rows=n, max_generations=10000, seed=seed)
    workload = Workload("prefix:x<=0.5", (Prefix((0,), (0.5,)),), 1.0)
    synthetic = gsd.run(gsd_config, DEMO_SCHEMA, [workload], np.array([target]))
    return DemoSummary(
        target=target,
        annealed=annealed,
        annealed_surrogate_loss=surrogate,
        annealed_true_error=abs(prefix_query(annealed, 0.5) - target),
        gsd_result=synthetic,
        gsd_true_error=abs(prefix_query(synthetic, 0.5) - target),
        trace=tuple(trace),
        displacement=float(np.max(np.abs(_column(annealed) - _column(init)))),
    )
