"""Genetic projection: evolve synthetic datasets towards target query answers.

Candidates are stored as sparse edits of an elite (rows, columns and new
values) so that their counts can be updated from the touched rows only.
Counts are exact integers and losses are summed span by span in a fixed
order, so the incremental update and a full evaluation agree bit for bit.
"""
import dataclasses
import enum
import logging
import typing

import numpy as np

from gsdsynth.common import ParameterError
from gsdsynth.dataset import Dataset, DomainSchema, random_values
from gsdsynth.queries import QueryEngine, Span, Workload, tile_rows

log = logging.getLogger(__name__)

TraceCallback = typing.Callable[[dict], None]


class OperatorMode(enum.Enum):
    INCUMBENT = "incumbent"
    ELITE_PAIRS = "elite_pairs"


class CrossoverUnit(enum.Enum):
    ROW = "row"
    ENTRY = "entry"


class StopReason(enum.Enum):
    GENERATIONS = "generations"
    EARLY_STOP = "early-stop"
    ZERO_LOSS = "zero-loss"


class _Stream(enum.IntEnum):
    INIT = 0
    MUTATION = 1
    CROSSOVER = 2
    PAIRS = 3


@dataclasses.dataclass(frozen=True)
class GsdConfig:
    synthetic_rows: int = 1000
    max_generations: int = 100000
    p_mut: int = 100
    p_cross: int = 100
    elite: int = 2
    mutation_rate: int = 1
    crossover_rate: int = 1
    early_stop_threshold: float = 0.0001
    early_stop_window: typing.Optional[int] = None
    seed: int = 0
    operator_mode: str = OperatorMode.INCUMBENT.value
    crossover_unit: str = CrossoverUnit.ROW.value
    workers: int = 1

    def __post_init__(self):
        positive = {
            "synthetic_rows": self.synthetic_rows,
            "elite": self.elite,
            "mutation_rate": self.mutation_rate,
            "crossover_rate": self.crossover_rate,
            "workers": self.workers,
        }
        for name, value in positive.items():
            if value < 1:
                raise ParameterError(f"{name} must be at least 1, got {value}")
        if self.max_generations < 0:
            raise ParameterError(f"max_generations must not be negative, got {self.max_generations}")
        if self.p_mut < 0 or self.p_cross < 0 or self.p_mut + self.p_cross < 1:
            raise ParameterError("p_mut and p_cross must be non-negative with a positive sum")
        if not self.early_stop_threshold >= 0:
            raise ParameterError("early_stop_threshold must not be negative")
        if self.early_stop_window is not None and self.early_stop_window < 1:
            raise ParameterError("early_stop_window must be at least 1")
        try:
            OperatorMode(self.operator_mode)
        except ValueError as err:
            raise ParameterError(f"Unknown operator mode {self.operator_mode!r}") from err
        try:
            CrossoverUnit(self.crossover_unit)
        except ValueError as err:
            raise ParameterError(f"Unknown crossover unit {self.crossover_unit!r}") from err

    @property
    def window(self) -> int:
        return self.early_stop_window if self.early_stop_window is not None else self.synthetic_rows


@dataclasses.dataclass(eq=False)
class Elite:
    values: np.ndarray
    counts: np.ndarray
    loss: float


class EliteSet:
    """The E best candidates, ordered by loss; member 0 is the incumbent."""

    def __init__(self, members: typing.List[Elite]):
        order = sorted(range(len(members)), key=lambda i: members[i].loss)
        self.members = [members[i] for i in order]

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def best(self) -> Elite:
        return self.members[0]

    @property
    def losses(self) -> np.ndarray:
        return np.array([m.loss for m in self.members], dtype=np.float64)

    def stacked_values(self) -> np.ndarray:
        return np.stack([m.values for m in self.members])

    def stacked_counts(self) -> np.ndarray:
        return np.stack([m.counts for m in self.members])

    def dataset(self, i: int, schema: DomainSchema) -> Dataset:
        return Dataset(schema, self.members[i].values, check=False)


@dataclasses.dataclass(frozen=True, eq=False)
class GsdResult:
    dataset: Dataset
    loss: float
    generations: int
    history: typing.Tuple[float, ...]
    stop_reason: StopReason
    elites: EliteSet


@dataclasses.dataclass(eq=False)
class _Proposal:
    """Candidates as edits of elites; edits apply in column order, later ones win."""

    parents: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def __len__(self):
        return self.parents.shape[0]

    def apply(self, elite_values: np.ndarray, p: int) -> np.ndarray:
        values = elite_values[self.parents[p]].copy()
        for r, c, v in zip(self.rows[p], self.cols[p], self.vals[p]):
            values[r, c] = v
        return values

    def subset(self, members) -> "_Proposal":
        return _Proposal(
            self.parents[members], self.rows[members], self.cols[members], self.vals[members]
        )

    def extend(self, rows, cols, vals) -> "_Proposal":
        return _Proposal(
            self.parents,
            np.concatenate([self.rows, rows], axis=1),
            np.concatenate([self.cols, cols], axis=1),
            np.concatenate([self.vals, vals], axis=1),
        )


def _substream(seed: int, generation: int, stream: _Stream) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, generation, int(stream)])


def objective(
    a_hat: np.ndarray,
    counts: np.ndarray,
    n_rows: int,
    spans: typing.Optional[typing.Sequence[Span]] = None,
) -> np.ndarray:
    """Squared L2 distance to a_hat for each row of counts.

    With spans the sum is taken span by span, in the order the generation
    loop accumulates candidate losses.
    """
    if spans is None:
        residual = a_hat - counts / n_rows
        return np.sum(residual * residual, axis=-1)
    total = np.zeros(counts.shape[:-1], dtype=np.float64)
    for span in spans:
        residual = a_hat[span.start:span.stop] - counts[..., span.start:span.stop] / n_rows
        total += np.sum(residual * residual, axis=-1)
    return total


def _uniform_values(u: np.ndarray, cols: np.ndarray, cardinalities: np.ndarray) -> np.ndarray:
    k = cardinalities[cols]
    return np.where(k > 0, np.minimum(np.floor(u * k), np.maximum(k - 1, 0)), u)


def _mutation_proposal(
    rng: np.random.Generator, size: int, n_rows: int, cardinalities: np.ndarray, rate: int, parents
) -> _Proposal:
    d = cardinalities.shape[0]
    cells = n_rows * d
    rate = min(rate, cells)
    if rate == 1:
        positions = rng.integers(0, cells, size=(size, 1))
    else:
        positions = np.stack([rng.choice(cells, size=rate, replace=False) for _ in range(size)])
    positions = positions.reshape(size, rate)
    cols = positions % d
    vals = _uniform_values(rng.random((size, rate)), cols, cardinalities)
    return _Proposal(np.broadcast_to(parents, (size,)).copy(), positions // d, cols, vals)


def _crossover_proposal(
    rng: np.random.Generator,
    size: int,
    elite_values: np.ndarray,
    rate: int,
    unit: CrossoverUnit = CrossoverUnit.ENTRY,
    donors=None,
) -> _Proposal:
    """Copy `rate` donor entries, or whole donor rows, over random rows of elite 0."""
    n_elites, n_rows, d = elite_values.shape
    if donors is None:
        donors = rng.integers(0, n_elites, size=size)
    targets = rng.integers(0, n_rows, size=(size, rate))
    sources = rng.integers(0, n_rows, size=(size, rate))
    parents = np.zeros(size, dtype=np.int64)
    if unit is CrossoverUnit.ENTRY:
        cols = rng.integers(0, d, size=(size, rate))
        vals = elite_values[donors[:, None], sources, cols]
        return _Proposal(parents, targets, cols, vals)
    rows = np.repeat(targets, d, axis=1)
    cols = np.tile(np.arange(d), (size, rate))
    vals = elite_values[donors[:, None], sources].reshape(size, rate * d)
    return _Proposal(parents, rows, cols, vals)


def _resample_copies(
    rng: np.random.Generator, proposal: _Proposal, cardinalities: np.ndarray
) -> _Proposal:
    """Resample one random cell of every row copied by a row crossover."""
    d = cardinalities.shape[0]
    targets = proposal.rows[:, ::d]
    cols = rng.integers(0, d, size=targets.shape)
    vals = _uniform_values(rng.random(targets.shape), cols, cardinalities)
    return proposal.extend(targets, cols, vals)


def _pair_proposal(
    rng: np.random.Generator, size: int, elite_values: np.ndarray, cardinalities: np.ndarray, rate: int
) -> _Proposal:
    """Copy a whole donor row into a random elite, then mutate the result."""
    n_elites, n_rows, d = elite_values.shape
    parents = rng.integers(0, n_elites, size=size)
    donors = rng.integers(0, n_elites, size=size)
    target_rows = rng.integers(0, n_rows, size=size)
    source_rows = rng.integers(0, n_rows, size=size)
    rows = np.repeat(target_rows[:, None], d, axis=1)
    cols = np.broadcast_to(np.arange(d), (size, d))
    vals = elite_values[donors, source_rows, :]
    proposal = _Proposal(parents, rows, cols, vals)
    mutation = _mutation_proposal(rng, size, n_rows, cardinalities, rate, parents)
    return proposal.extend(mutation.rows, mutation.cols, mutation.vals)


def _touched(elite_values: np.ndarray, proposal: _Proposal):
    """Touched rows before and after the edits, and which edit slots hold a row's first edit."""
    size, width = proposal.rows.shape
    old = elite_values[proposal.parents[:, None], proposal.rows]
    new = old.copy()
    for e in range(width):
        same_row = proposal.rows == proposal.rows[:, e:e + 1]
        p, s = np.nonzero(same_row)
        new[p, s, proposal.cols[p, e]] = proposal.vals[p, e]
    first = np.ones((size, width), dtype=bool)
    for s in range(1, width):
        first[:, s] = ~np.any(proposal.rows[:, :s] == proposal.rows[:, s:s + 1], axis=1)
    return new, old, first


def _span_diff(span: Span, new: np.ndarray, old: np.ndarray, first: np.ndarray) -> np.ndarray:
    """Integer count changes of the span's queries, candidates in row blocks of one tile."""
    size, width, d = new.shape
    out = np.empty((size, span.width), dtype=np.int64)
    block = max(1, tile_rows(span.width) // max(width, 1))
    for start in range(0, size, block):
        stop = min(start + block, size)
        keep = first[start:stop].reshape(-1, 1)
        after = span.mask(new[start:stop].reshape(-1, d)) & keep
        before = span.mask(old[start:stop].reshape(-1, d)) & keep
        out[start:stop] = (
            after.reshape(stop - start, width, -1).sum(axis=1, dtype=np.int64)
            - before.reshape(stop - start, width, -1).sum(axis=1, dtype=np.int64)
        )
    return out


def _proposal_counts(
    engine: QueryEngine, elite_values: np.ndarray, elite_counts: np.ndarray, proposal: _Proposal
) -> np.ndarray:
    """Full count vectors of the proposal's candidates, updated from the rows their edits touch."""
    new, old, first = _touched(elite_values, proposal)
    diffs = engine.map(lambda span: _span_diff(span, new, old, first), engine.spans)
    counts = elite_counts[proposal.parents].copy()
    for span, diff in zip(engine.spans, diffs):
        counts[:, span.start:span.stop] += diff
    return counts


def _proposal_losses(
    engine: QueryEngine,
    a_hat: np.ndarray,
    n_rows: int,
    elite_values: np.ndarray,
    elite_counts: np.ndarray,
    proposal: _Proposal,
) -> np.ndarray:
    """Losses of the proposal's candidates without materializing their count vectors."""
    new, old, first = _touched(elite_values, proposal)
    parents = proposal.parents

    def span_loss(span: Span) -> np.ndarray:
        counts = elite_counts[parents, span.start:span.stop] + _span_diff(span, new, old, first)
        residual = a_hat[span.start:span.stop] - counts / n_rows
        return np.sum(residual * residual, axis=-1)

    total = np.zeros(len(proposal), dtype=np.float64)
    for part in engine.map(span_loss, engine.spans):
        total += part
    return total


def _candidate_dataset(
    best: Dataset, proposal: _Proposal, elite_values: np.ndarray
) -> Dataset:
    return Dataset(best.schema, proposal.apply(elite_values, 0))


def mutate(best: Dataset, rate: int, rng: np.random.Generator) -> Dataset:
    """Resample `rate` distinct cells of best uniformly from their domains."""
    if rate < 1:
        raise ParameterError(f"rate must be at least 1, got {rate}")
    proposal = _mutation_proposal(rng, 1, best.n_rows, best.schema.cardinalities, rate, 0)
    return _candidate_dataset(best, proposal, best.values[None])


def crossover(
    best: Dataset, donor: Dataset, rate: int, rng: np.random.Generator, unit: str = "entry"
) -> Dataset:
    """Copy `rate` random donor cells into random rows of best, column by column.

    With unit "row" whole donor rows replace random rows of best instead.
    """
    if rate < 1:
        raise ParameterError(f"rate must be at least 1, got {rate}")
    if best.schema != donor.schema or best.values.shape != donor.values.shape:
        raise ParameterError("crossover needs datasets with the same schema and row count")
    try:
        unit = CrossoverUnit(unit)
    except ValueError as err:
        raise ParameterError(f"Unknown crossover unit {unit!r}") from err
    stacked = np.stack([best.values, donor.values])
    proposal = _crossover_proposal(rng, 1, stacked, rate, unit, donors=np.ones(1, dtype=np.int64))
    return _candidate_dataset(best, proposal, stacked)


def fitness(
    candidate: Dataset, Q: typing.Sequence[Workload], a_hat: np.ndarray, workers: int = 1
) -> float:
    with QueryEngine(candidate.schema, Q, workers) as engine:
        a_hat = _check_targets(a_hat, engine)
        counts = engine.counts(candidate.values)
        return float(objective(a_hat, counts[None], candidate.n_rows, engine.spans)[0])


def _check_targets(a_hat, engine: QueryEngine) -> np.ndarray:
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if a_hat.shape != (engine.total,):
        raise ParameterError(
            f"Expected {engine.total} target answers, got {a_hat.shape[0] if a_hat.ndim else 0}"
        )
    if not np.all(np.isfinite(a_hat)):
        raise ParameterError("target answers must be finite")
    return a_hat


def early_stop_check(loss_history: typing.Sequence[float], window: int, threshold: float) -> bool:
    if threshold < 0:
        raise ParameterError(f"threshold must not be negative, got {threshold}")
    if len(loss_history) <= window:
        return False
    before = loss_history[-1 - window]
    now = loss_history[-1]
    return (before - now) / max(before, np.finfo(np.float64).tiny) < threshold


def evolve(
    config: GsdConfig,
    schema: DomainSchema,
    Q: typing.Sequence[Workload],
    a_hat: np.ndarray,
    init: typing.Optional[Dataset] = None,
    trace: typing.Optional[TraceCallback] = None,
) -> GsdResult:
    with QueryEngine(schema, Q, config.workers) as engine:
        return _Evolution(config, schema, engine, _check_targets(a_hat, engine), trace).run(init)


def run(
    config: GsdConfig,
    schema: DomainSchema,
    Q: typing.Sequence[Workload],
    a_hat: np.ndarray,
    init: typing.Optional[Dataset] = None,
    trace: typing.Optional[TraceCallback] = None,
) -> Dataset:
    return evolve(config, schema, Q, a_hat, init=init, trace=trace).dataset


class _Evolution:
    def __init__(self, config: GsdConfig, schema: DomainSchema, engine: QueryEngine, a_hat, trace):
        self.config = config
        self.schema = schema
        self.engine = engine
        self.a_hat = a_hat
        self.trace = trace
        self.cardinalities = schema.cardinalities
        self.mode = OperatorMode(config.operator_mode)
        self.unit = CrossoverUnit(config.crossover_unit)

    def _elite(self, values: np.ndarray) -> Elite:
        counts = self.engine.counts(values)
        loss = objective(self.a_hat, counts[None], self.config.synthetic_rows, self.engine.spans)
        return Elite(values, counts, float(loss[0]))

    def _initial(self, init: typing.Optional[Dataset]) -> EliteSet:
        rng = _substream(self.config.seed, 0, _Stream.INIT)
        n = self.config.synthetic_rows
        values = [random_values(self.schema, n, rng) for _ in range(self.config.elite)]
        if init is not None:
            if init.schema != self.schema or init.n_rows != n:
                raise ParameterError("init must share the schema and have synthetic_rows rows")
            values[0] = init.values.copy()
        return EliteSet([self._elite(v) for v in values])

    def _proposals(self, generation: int, elite_values: np.ndarray) -> typing.List[_Proposal]:
        config = self.config
        n = config.synthetic_rows
        proposals = []
        if self.mode is OperatorMode.INCUMBENT:
            if config.p_mut:
                rng = _substream(config.seed, generation, _Stream.MUTATION)
                proposals.append(
                    _mutation_proposal(rng, config.p_mut, n, self.cardinalities, config.mutation_rate, 0)
                )
            if config.p_cross:
                rng = _substream(config.seed, generation, _Stream.CROSSOVER)
                proposal = _crossover_proposal(
                    rng, config.p_cross, elite_values, config.crossover_rate, self.unit
                )
                if self.unit is CrossoverUnit.ROW:
                    proposal = _resample_copies(rng, proposal, self.cardinalities)
                proposals.append(proposal)
        else:
            rng = _substream(config.seed, generation, _Stream.PAIRS)
            proposals.append(
                _pair_proposal(
                    rng, config.p_mut + config.p_cross, elite_values, self.cardinalities,
                    config.mutation_rate,
                )
            )
        return proposals

    def _generation(self, generation: int, elites: EliteSet) -> typing.Tuple[EliteSet, np.ndarray]:
        n = self.config.synthetic_rows
        elite_values = elites.stacked_values()
        elite_counts = elites.stacked_counts()
        proposals = self._proposals(generation, elite_values)
        losses = [
            _proposal_losses(self.engine, self.a_hat, n, elite_values, elite_counts, p)
            for p in proposals
        ]
        # new candidates come first, so an equal loss replaces the incumbent
        population = np.concatenate(losses + [elites.losses])
        order = np.argsort(population, kind="stable")[: len(elites)]
        candidates = sum(len(p) for p in proposals)
        members = []
        for index in order:
            if index >= candidates:
                members.append(elites.members[index - candidates])
                continue
            for proposal, proposal_losses in zip(proposals, losses):
                if index < len(proposal):
                    winner = proposal.subset([index])
                    counts = _proposal_counts(self.engine, elite_values, elite_counts, winner)
                    members.append(
                        Elite(
                            winner.apply(elite_values, 0),
                            counts[0],
                            float(proposal_losses[index]),
                        )
                    )
                    break
                index -= len(proposal)
        return EliteSet(members), population

    def run(self, init: typing.Optional[Dataset]) -> GsdResult:
        config = self.config
        elites = self._initial(init)
        history = [elites.best.loss]
        stop = StopReason.GENERATIONS
        generations = 0
        while generations < config.max_generations:
            if elites.best.loss == 0.0:
                stop = StopReason.ZERO_LOSS
                break
            if early_stop_check(history, config.window, config.early_stop_threshold):
                stop = StopReason.EARLY_STOP
                break
            generations += 1
            elites, population = self._generation(generations, elites)
            history.append(elites.best.loss)
            if self.trace is not None:
                self.trace(
                    {
                        "generation": generations,
                        "best_loss": elites.best.loss,
                        "population_best": float(population.min()),
                        "population_worst": float(population.max()),
                    }
                )
            if generations % 1000 == 0:
                log.debug("generation %d: best loss %.6g", generations, elites.best.loss)
        log.info(
            "projection finished after %d generations (%s), loss %.6g",
            generations,
            stop.value,
            elites.best.loss,
        )
        return GsdResult(
            dataset=elites.dataset(0, self.schema),
            loss=elites.best.loss,
            generations=generations,
            history=tuple(history),
            stop_reason=stop,
            elites=elites,
        )
