"""Error metrics and an exhaustive projection oracle for tiny domains."""
import dataclasses
import itertools
import logging
import math
import typing

import numpy as np
from scipy import special

from gsdsynth.common import CapacityError, ParameterError, UnsupportedError
from gsdsynth.dataset import Dataset, DomainSchema
from gsdsynth.gsd import objective
from gsdsynth.queries import QueryEngine, Workload

log = logging.getLogger(__name__)

ORACLE_LIMIT = 10 ** 6
_BATCH = 4096


@dataclasses.dataclass(frozen=True)
class WorkloadError:
    name: str
    max_error: float
    avg_error: float


def _differences(
    W: typing.Sequence[Workload], D: Dataset, D_hat: Dataset, workers: int
) -> typing.Tuple[np.ndarray, QueryEngine]:
    if D.schema != D_hat.schema:
        raise ParameterError("Datasets do not share a schema")
    with QueryEngine(D.schema, W, workers) as engine:
        return engine.answers(D) - engine.answers(D_hat), engine


def max_error(W: typing.Sequence[Workload], D: Dataset, D_hat: Dataset, workers: int = 1) -> float:
    diff, _ = _differences(W, D, D_hat, workers)
    return float(np.max(np.abs(diff))) if diff.size else 0.0


def avg_error(W: typing.Sequence[Workload], D: Dataset, D_hat: Dataset, workers: int = 1) -> float:
    diff, _ = _differences(W, D, D_hat, workers)
    return float(math.sqrt(np.mean(diff * diff))) if diff.size else 0.0


def per_workload_errors(
    W: typing.Sequence[Workload], D: Dataset, D_hat: Dataset, workers: int = 1
) -> typing.List[WorkloadError]:
    diff, engine = _differences(W, D, D_hat, workers)
    table = []
    for w, span in zip(W, engine.slices()):
        part = diff[span]
        if part.size:
            table.append(
                WorkloadError(w.name, float(np.max(np.abs(part))), float(math.sqrt(np.mean(part * part))))
            )
        else:
            table.append(WorkloadError(w.name, 0.0, 0.0))
    return table


def brute_force_projection(
    schema: DomainSchema, n_prime: int, W: typing.Sequence[Workload], a_hat
) -> typing.Tuple[Dataset, float]:
    """Exact minimizer of the projection loss over all n_prime-row multisets.

    Multisets are visited in lexicographic order of their sorted domain
    points, and the first minimizer wins.
    """
    if n_prime < 1:
        raise ParameterError(f"n_prime must be at least 1, got {n_prime}")
    if schema.numeric_indices:
        raise UnsupportedError("The exhaustive oracle only handles categorical attributes")
    size = schema.domain_size
    if size ** n_prime > ORACLE_LIMIT:
        raise CapacityError(
            f"{size}^{n_prime} datasets exceed the oracle limit of {ORACLE_LIMIT}"
        )
    points = np.array(
        list(itertools.product(*(range(a.cardinality) for a in schema.attributes))), dtype=np.float64
    )
    with QueryEngine(schema, W) as engine:
        a_hat = np.asarray(a_hat, dtype=np.float64)
        if a_hat.shape != (engine.total,):
            raise ParameterError(f"Expected {engine.total} target answers")
        point_counts = engine.row_counts(points)
    log.debug(
        "oracle: %d multisets of %d points", int(special.comb(size + n_prime - 1, n_prime, exact=True)), size
    )
    best_loss = math.inf
    best: typing.Optional[tuple] = None
    combinations = itertools.combinations_with_replacement(range(size), n_prime)
    while True:
        batch = np.array(list(itertools.islice(combinations, _BATCH)), dtype=np.int64)
        if batch.size == 0:
            break
        losses = objective(a_hat, point_counts[batch].sum(axis=1), n_prime)
        i = int(np.argmin(losses))
        if losses[i] < best_loss:
            best_loss = float(losses[i])
            best = tuple(batch[i])
    return Dataset(schema, points[list(best)]), best_loss


def accuracy_bound_terms(
    n: int, n_prime: int, m: int, domain_size: int, epsilon: float, delta: float, beta: float = 0.05
) -> typing.Tuple[float, float]:
    """Privacy and sampling terms of the average-error bound of exact projection, constants dropped."""
    if min(n, n_prime, m, domain_size) < 1 or epsilon <= 0 or not 0 < delta < 1 or not 0 < beta < 1:
        raise ParameterError("invalid arguments for the accuracy bound")
    privacy = (math.log(domain_size / beta) * math.log(1 / delta)) ** 0.25 / math.sqrt(epsilon * n)
    sampling = math.sqrt(math.log(max(m, 2)) / n_prime)
    return privacy, sampling
