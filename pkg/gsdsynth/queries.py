"""Statistical queries, workload generators and the counting engine.

Every query answers with the fraction of rows satisfying its predicate.
Workloads are compiled into counting kernels that turn a block of rows
into 0/1 predicate values. Rows and queries are evaluated in tiles of at
most TILE_CELLS cells; counts are exact integers, so answers do not
depend on how rows are batched or how many threads evaluate them.
"""
import concurrent.futures
import dataclasses
import enum
import itertools
import json
import logging
import math
import pathlib
import typing

import numpy as np

from gsdsynth import common
from gsdsynth.common import IngestionError, ParameterError
from gsdsynth.dataset import Dataset, DomainSchema, one_hot_matrix

log = logging.getLogger(__name__)

DEFAULT_LEVELS = 5
# cells in one boolean predicate block
TILE_CELLS = 1 << 22
QUERY_TILE = 1 << 12


@dataclasses.dataclass(frozen=True)
class CategoricalMarginal:
    features: typing.Tuple[int, ...]
    values: typing.Tuple[int, ...]


@dataclasses.dataclass(frozen=True)
class RangeMarginal:
    """Categorical match plus interval membership on numeric features.

    Intervals are closed unless upper_closed marks an upper end as open.
    """

    cat_features: typing.Tuple[int, ...]
    cat_values: typing.Tuple[int, ...]
    num_features: typing.Tuple[int, ...]
    intervals: typing.Tuple[typing.Tuple[float, float], ...]
    upper_closed: typing.Tuple[bool, ...] = ()

    def closed(self, slot: int) -> bool:
        return not self.upper_closed or self.upper_closed[slot]


@dataclasses.dataclass(frozen=True)
class Prefix:
    num_features: typing.Tuple[int, ...]
    thresholds: typing.Tuple[float, ...]
    cat_features: typing.Tuple[int, ...] = ()
    cat_values: typing.Tuple[int, ...] = ()
    strict: bool = False


@dataclasses.dataclass(frozen=True, eq=False)
class Halfspace:
    theta: np.ndarray
    tau: float


Query = typing.Union[CategoricalMarginal, RangeMarginal, Prefix, Halfspace]


class WorkloadKind(enum.Enum):
    CATEGORICAL_MARGINAL = "categorical-marginal"
    BINARY_TREE = "binary-tree"
    PREFIXES = "prefixes"
    HALFSPACES = "halfspaces"
    CUSTOM = "custom"


@dataclasses.dataclass(frozen=True, eq=False)
class Workload:
    name: str
    queries: typing.Tuple[Query, ...]
    l2_sensitivity: float
    kind: WorkloadKind = WorkloadKind.CUSTOM
    levels: typing.Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))
        if not math.isfinite(self.l2_sensitivity) or self.l2_sensitivity <= 0:
            raise ParameterError(f"Workload {self.name!r} needs a positive sensitivity")

    def __len__(self):
        return len(self.queries)


def _check_features(features, schema: DomainSchema, categorical: bool, what: str):
    for f in features:
        if not 0 <= f < schema.n_attributes:
            raise ParameterError(f"{what}: attribute index {f} out of range")
        if schema.attributes[f].is_categorical != categorical:
            kind = "categorical" if categorical else "numeric"
            raise ParameterError(f"{what}: attribute {schema.attributes[f].name!r} is not {kind}")


def _check_values(features, values, schema: DomainSchema, what: str):
    if len(features) != len(values):
        raise ParameterError(f"{what}: features and values differ in length")
    for f, v in zip(features, values):
        if not 0 <= v < schema.attributes[f].cardinality:
            raise ParameterError(f"{what}: value {v} outside attribute {schema.attributes[f].name!r}")


def validate_query(q: Query, schema: DomainSchema):
    what = type(q).__name__
    if isinstance(q, CategoricalMarginal):
        _check_features(q.features, schema, True, what)
        _check_values(q.features, q.values, schema, what)
    elif isinstance(q, RangeMarginal):
        _check_features(q.cat_features, schema, True, what)
        _check_values(q.cat_features, q.cat_values, schema, what)
        _check_features(q.num_features, schema, False, what)
        if len(q.intervals) != len(q.num_features):
            raise ParameterError(f"{what}: one interval per numeric feature is required")
        if q.upper_closed and len(q.upper_closed) != len(q.num_features):
            raise ParameterError(f"{what}: upper_closed must match the numeric features")
        for lo, hi in q.intervals:
            if not 0 <= lo <= hi <= 1:
                raise ParameterError(f"{what}: interval [{lo}, {hi}] is not inside [0, 1]")
    elif isinstance(q, Prefix):
        _check_features(q.cat_features, schema, True, what)
        _check_values(q.cat_features, q.cat_values, schema, what)
        _check_features(q.num_features, schema, False, what)
        if len(q.thresholds) != len(q.num_features):
            raise ParameterError(f"{what}: one threshold per numeric feature is required")
    elif isinstance(q, Halfspace):
        if np.shape(q.theta) != (schema.one_hot_dim,):
            raise ParameterError(
                f"{what}: theta has shape {np.shape(q.theta)}, expected ({schema.one_hot_dim},)"
            )
    else:
        raise ParameterError(f"Unknown query type {what}")


def predicate(q: Query, values: np.ndarray, schema: DomainSchema) -> np.ndarray:
    """Boolean vector telling which rows satisfy q."""
    n = values.shape[0]
    if isinstance(q, CategoricalMarginal):
        mask = np.ones(n, dtype=bool)
        for f, v in zip(q.features, q.values):
            mask &= values[:, f] == v
        return mask
    if isinstance(q, RangeMarginal):
        mask = np.ones(n, dtype=bool)
        for f, v in zip(q.cat_features, q.cat_values):
            mask &= values[:, f] == v
        for slot, (f, (lo, hi)) in enumerate(zip(q.num_features, q.intervals)):
            column = values[:, f]
            mask &= column >= lo
            mask &= (column <= hi) if q.closed(slot) else (column < hi)
        return mask
    if isinstance(q, Prefix):
        mask = np.ones(n, dtype=bool)
        for f, v in zip(q.cat_features, q.cat_values):
            mask &= values[:, f] == v
        for f, t in zip(q.num_features, q.thresholds):
            mask &= (values[:, f] < t) if q.strict else (values[:, f] <= t)
        return mask
    if isinstance(q, Halfspace):
        return one_hot_matrix(values, schema) @ q.theta <= q.tau
    raise ParameterError(f"Unknown query type {type(q).__name__}")


def eval_query(q: Query, D: Dataset) -> float:
    validate_query(q, D.schema)
    return float(np.count_nonzero(predicate(q, D.values, D.schema))) / D.n_rows


def dyadic_intervals(levels: int) -> typing.List[typing.Tuple[float, float, bool]]:
    """(lo, hi, upper_closed) for every level 1..levels; only the last interval of a level is closed."""
    intervals = []
    for level in range(1, levels + 1):
        width = 2 ** level
        for i in range(width):
            intervals.append((i / width, (i + 1) / width, i == width - 1))
    return intervals


def gen_categorical_marginal_workloads(schema: DomainSchema, k: int) -> typing.List[Workload]:
    categorical = schema.categorical_indices
    if k < 1 or k > len(categorical):
        raise ParameterError(
            f"Cannot build {k}-way marginals from {len(categorical)} categorical attributes"
        )
    workloads = []
    for features in itertools.combinations(categorical, k):
        domains = [range(schema.attributes[f].cardinality) for f in features]
        queries = [CategoricalMarginal(features, values) for values in itertools.product(*domains)]
        name = "cat:" + ",".join(schema.attributes[f].name for f in features)
        workloads.append(
            Workload(name, tuple(queries), math.sqrt(2), WorkloadKind.CATEGORICAL_MARGINAL)
        )
    log.debug("built %d %d-way categorical marginal workloads", len(workloads), k)
    return workloads


def _binary_tree_queries(
    cat_feature: int, cardinality: int, num_features: typing.Tuple[int, ...], levels: int
) -> typing.List[RangeMarginal]:
    queries = []
    for value in range(cardinality):
        for level in range(1, levels + 1):
            width = 2 ** level
            for box in itertools.product(range(width), repeat=len(num_features)):
                queries.append(
                    RangeMarginal(
                        (cat_feature,),
                        (value,),
                        num_features,
                        tuple((i / width, (i + 1) / width) for i in box),
                        tuple(i == width - 1 for i in box),
                    )
                )
    return queries


def gen_binary_tree_workloads(
    schema: DomainSchema, k: int, levels: int = DEFAULT_LEVELS
) -> typing.List[Workload]:
    """One workload per categorical attribute and (k-1)-subset of numeric attributes.

    Each level contributes the boxes of width 1/2^level across the numeric
    features, so a row lies in exactly one box per level.
    """
    categorical = schema.categorical_indices
    numeric = schema.numeric_indices
    if k < 2:
        raise ParameterError(f"Binary-tree marginals need k >= 2, got {k}")
    if levels < 1:
        raise ParameterError(f"levels must be positive, got {levels}")
    if not categorical or len(numeric) < k - 1:
        raise ParameterError(
            f"Binary-tree {k}-way marginals need 1 categorical and {k - 1} numeric attributes"
        )
    sensitivity = math.sqrt(2 * levels)
    workloads = []
    for c in categorical:
        for num_features in itertools.combinations(numeric, k - 1):
            queries = _binary_tree_queries(c, schema.attributes[c].cardinality, num_features, levels)
            name = "bt:{}|{}".format(
                schema.attributes[c].name, ",".join(schema.attributes[f].name for f in num_features)
            )
            workloads.append(
                Workload(name, tuple(queries), sensitivity, WorkloadKind.BINARY_TREE, levels)
            )
    return workloads


def gen_random_prefixes(schema: DomainSchema, m: int, rng: np.random.Generator) -> Workload:
    categorical = schema.categorical_indices
    numeric = schema.numeric_indices
    if not categorical or len(numeric) < 2:
        raise ParameterError("Random prefixes need 1 categorical and 2 numeric attributes")
    if m < 0:
        raise ParameterError(f"m must not be negative, got {m}")
    queries = []
    for _ in range(m):
        c = categorical[rng.integers(len(categorical))]
        a, b = rng.choice(numeric, size=2, replace=False)
        value = int(rng.integers(schema.attributes[c].cardinality))
        thresholds = rng.random(2)
        queries.append(
            Prefix(
                (int(a), int(b)),
                (float(thresholds[0]), float(thresholds[1])),
                (c,),
                (value,),
                strict=True,
            )
        )
    return Workload(f"prefixes:m={m}", tuple(queries), 1.0, WorkloadKind.PREFIXES)


def gen_random_halfspaces(schema: DomainSchema, m: int, rng: np.random.Generator) -> Workload:
    if m < 0:
        raise ParameterError(f"m must not be negative, got {m}")
    # variance follows the attribute count while theta spans the one-hot space
    theta = rng.normal(0.0, math.sqrt(1 / schema.n_attributes), size=(m, schema.one_hot_dim))
    tau = rng.normal(0.0, 1.0, size=m)
    queries = tuple(Halfspace(theta[i], float(tau[i])) for i in range(m))
    return Workload(f"halfspaces:m={m}", queries, 1.0, WorkloadKind.HALFSPACES)


def workload_sensitivity(w: Workload) -> float:
    return w.l2_sensitivity


def tile_rows(width: int) -> int:
    """Rows per block so that a block of `width` queries stays within TILE_CELLS."""
    return max(1, TILE_CELLS // max(width, 1))


def per_query_sensitivity(w: Workload) -> float:
    """Bound on the L2 change of the count vector when each query may flip on one replaced row."""
    if w.kind is WorkloadKind.CATEGORICAL_MARGINAL:
        return math.sqrt(2)
    if w.kind is WorkloadKind.BINARY_TREE and w.levels is not None:
        return math.sqrt(2 * w.levels)
    return math.sqrt(len(w))


class Kernel:
    """Maps a block of rows to 0/1 predicate values, one column per query."""

    size: int

    def mask(self, values: np.ndarray, lo: int, hi: int) -> np.ndarray:
        """Predicate values of queries lo..hi-1 as a (rows, hi - lo) boolean array."""
        raise NotImplementedError

    def row_counts(self, values: np.ndarray) -> np.ndarray:
        return self.mask(values, 0, self.size).astype(np.float64)

    def counts(self, values: np.ndarray) -> np.ndarray:
        total = np.zeros(self.size, dtype=np.int64)
        for lo in range(0, self.size, QUERY_TILE):
            hi = min(lo + QUERY_TILE, self.size)
            step = tile_rows(hi - lo)
            for start in range(0, values.shape[0], step):
                total[lo:hi] += self.mask(values[start:start + step], lo, hi).sum(axis=0)
        return total.astype(np.float64)


class _IndexKernel(Kernel):
    """Kernels whose rows each satisfy exactly one query."""

    def cell(self, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mask(self, values, lo, hi):
        cells = self.cell(values)
        out = np.zeros((values.shape[0], hi - lo), dtype=bool)
        rows, slots = np.nonzero((cells >= lo) & (cells < hi))
        out[rows, cells[rows, slots] - lo] = True
        return out

    def counts(self, values):
        return np.bincount(self.cell(values).ravel(), minlength=self.size).astype(np.float64)


class MarginalKernel(_IndexKernel):
    def __init__(self, features, cardinalities):
        self.features = list(features)
        self.cardinalities = np.asarray(cardinalities, dtype=np.int64)
        # first feature is the most significant digit, matching itertools.product order
        self.strides = np.concatenate([np.cumprod(self.cardinalities[::-1])[::-1][1:], [1]])
        self.size = int(np.prod(self.cardinalities))

    def cell(self, values):
        codes = values[:, self.features].astype(np.int64)
        return (codes @ self.strides).reshape(-1, 1)


class BinaryTreeKernel(_IndexKernel):
    def __init__(self, cat_feature, cardinality, num_features, levels):
        self.cat_feature = cat_feature
        self.num_features = list(num_features)
        self.levels = levels
        r = len(self.num_features)
        per_level = [(2 ** level) ** r for level in range(1, levels + 1)]
        self.level_offsets = np.concatenate([[0], np.cumsum(per_level)[:-1]]).astype(np.int64)
        self.per_value = int(sum(per_level))
        self.size = cardinality * self.per_value

    def cell(self, values):
        n = values.shape[0]
        base = values[:, self.cat_feature].astype(np.int64) * self.per_value
        numeric = values[:, self.num_features]
        cells = np.empty((n, self.levels), dtype=np.int64)
        for index, level in enumerate(range(1, self.levels + 1)):
            width = 2 ** level
            bins = np.minimum(np.floor(numeric * width).astype(np.int64), width - 1)
            box = np.zeros(n, dtype=np.int64)
            for slot in range(bins.shape[1]):
                box = box * width + bins[:, slot]
            cells[:, index] = base + self.level_offsets[index] + box
        return cells


class PrefixKernel(Kernel):
    def __init__(self, queries: typing.Sequence[Prefix]):
        self.size = len(queries)
        self.cat_features = np.array([q.cat_features for q in queries], dtype=np.int64)
        self.cat_values = np.array([q.cat_values for q in queries], dtype=np.float64)
        self.num_features = np.array([q.num_features for q in queries], dtype=np.int64)
        self.thresholds = np.array([q.thresholds for q in queries], dtype=np.float64)
        self.strict = np.array([q.strict for q in queries], dtype=bool)

    def mask(self, values, lo, hi):
        mask = np.ones((values.shape[0], hi - lo), dtype=bool)
        for slot in range(self.cat_features.shape[1] if self.size else 0):
            mask &= values[:, self.cat_features[lo:hi, slot]] == self.cat_values[lo:hi, slot]
        for slot in range(self.num_features.shape[1] if self.size else 0):
            column = values[:, self.num_features[lo:hi, slot]]
            threshold = self.thresholds[lo:hi, slot]
            mask &= np.where(self.strict[lo:hi], column < threshold, column <= threshold)
        return mask


class HalfspaceKernel(Kernel):
    def __init__(self, queries: typing.Sequence[Halfspace], schema: DomainSchema):
        self.schema = schema
        self.size = len(queries)
        self.theta = np.array([q.theta for q in queries], dtype=np.float64).reshape(
            self.size, schema.one_hot_dim
        ).T
        self.tau = np.array([q.tau for q in queries], dtype=np.float64)

    def mask(self, values, lo, hi):
        return one_hot_matrix(values, self.schema) @ self.theta[:, lo:hi] <= self.tau[lo:hi]


class GenericKernel(Kernel):
    def __init__(self, queries: typing.Sequence[Query], schema: DomainSchema):
        self.queries = list(queries)
        self.schema = schema
        self.size = len(self.queries)

    def mask(self, values, lo, hi):
        out = np.zeros((values.shape[0], hi - lo), dtype=bool)
        for i, q in enumerate(self.queries[lo:hi]):
            out[:, i] = predicate(q, values, self.schema)
        return out


def _uniform(queries, cls, arity) -> bool:
    return all(isinstance(q, cls) and arity(q) == arity(queries[0]) for q in queries)


def compile_workload(w: Workload, schema: DomainSchema) -> Kernel:
    queries = w.queries
    if w.kind is WorkloadKind.CATEGORICAL_MARGINAL and queries:
        features = queries[0].features
        domains = [range(schema.attributes[f].cardinality) for f in features]
        expected = tuple(CategoricalMarginal(features, v) for v in itertools.product(*domains))
        if queries == expected:
            return MarginalKernel(features, [schema.attributes[f].cardinality for f in features])
    if w.kind is WorkloadKind.BINARY_TREE and queries and w.levels:
        first = queries[0]
        if len(first.cat_features) == 1:
            c = first.cat_features[0]
            expected = _binary_tree_queries(
                c, schema.attributes[c].cardinality, first.num_features, w.levels
            )
            if list(queries) == expected:
                return BinaryTreeKernel(
                    c, schema.attributes[c].cardinality, first.num_features, w.levels
                )
    if queries and _uniform(queries, Prefix, lambda q: (len(q.cat_features), len(q.num_features))):
        return PrefixKernel(queries)
    if queries and all(isinstance(q, Halfspace) for q in queries):
        return HalfspaceKernel(queries, schema)
    return GenericKernel(queries, schema)


@dataclasses.dataclass(frozen=True, eq=False)
class Span:
    """Queries lo..hi-1 of one kernel, stored from `start` in the answer vector."""

    kernel: Kernel
    lo: int
    hi: int
    start: int

    @property
    def width(self) -> int:
        return self.hi - self.lo

    @property
    def stop(self) -> int:
        return self.start + self.width

    def mask(self, values: np.ndarray) -> np.ndarray:
        return self.kernel.mask(values, self.lo, self.hi)


class QueryEngine:
    """Evaluates a list of workloads over row blocks.

    The answer vector is cut into spans of at most QUERY_TILE queries of one
    kernel; with several workers, kernels or spans are spread over a thread pool.
    """

    def __init__(self, schema: DomainSchema, workloads: typing.Sequence[Workload], workers: int = 1):
        if workers < 1:
            raise ParameterError(f"workers must be at least 1, got {workers}")
        self.schema = schema
        self.workloads = list(workloads)
        for w in self.workloads:
            for q in w.queries:
                validate_query(q, schema)
        self.kernels = [compile_workload(w, schema) for w in self.workloads]
        self.sizes = [k.size for k in self.kernels]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes, dtype=np.int64)]).astype(np.int64)
        self.total = int(self.offsets[-1])
        self.spans = [
            Span(kernel, lo, min(lo + QUERY_TILE, kernel.size), int(offset) + lo)
            for kernel, offset in zip(self.kernels, self.offsets)
            for lo in range(0, kernel.size, QUERY_TILE)
        ]
        self.workers = workers
        self._pool = None
        if workers > 1 and len(self.spans) > 1:
            self._pool = concurrent.futures.ThreadPoolExecutor(max_workers=workers)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def slices(self) -> typing.List[slice]:
        return [slice(int(a), int(b)) for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def map(self, fn, items) -> list:
        """fn over items, in order, on the pool when there is one."""
        if self._pool is None:
            return [fn(item) for item in items]
        return list(self._pool.map(fn, items))

    def _check(self, values: np.ndarray):
        if values.ndim != 2 or values.shape[1] != self.schema.n_attributes:
            raise ParameterError(f"Rows of shape {values.shape} do not match the schema")

    def counts(self, values: np.ndarray) -> np.ndarray:
        self._check(values)
        if not self.kernels:
            return np.zeros(0, dtype=np.float64)
        return np.concatenate(self.map(lambda k: k.counts(values), self.kernels))

    def row_counts(self, values: np.ndarray) -> np.ndarray:
        """Dense 0/1 matrix of every row against every query, for small blocks."""
        self._check(values)
        if not self.kernels:
            return np.zeros((values.shape[0], 0), dtype=np.float64)
        return np.concatenate(self.map(lambda k: k.row_counts(values), self.kernels), axis=1)

    def answers(self, D: Dataset) -> np.ndarray:
        if D.schema != self.schema:
            raise ParameterError("Dataset schema does not match the workloads' schema")
        return self.counts(D.values) / D.n_rows


def eval_workloads(W: typing.Sequence[Workload], D: Dataset, workers: int = 1) -> np.ndarray:
    with QueryEngine(D.schema, W, workers) as engine:
        return engine.answers(D)


def _names(features, schema: DomainSchema) -> typing.List[str]:
    return [schema.attributes[f].name for f in features]


def query_to_document(q: Query, schema: DomainSchema) -> dict:
    if isinstance(q, CategoricalMarginal):
        return {
            "type": "categorical_marginal",
            "features": _names(q.features, schema),
            "values": list(q.values),
        }
    if isinstance(q, RangeMarginal):
        return {
            "type": "range_marginal",
            "cat_features": _names(q.cat_features, schema),
            "cat_values": list(q.cat_values),
            "num_features": _names(q.num_features, schema),
            "intervals": [list(i) for i in q.intervals],
            "upper_closed": [q.closed(s) for s in range(len(q.num_features))],
        }
    if isinstance(q, Prefix):
        return {
            "type": "prefix",
            "cat_features": _names(q.cat_features, schema),
            "cat_values": list(q.cat_values),
            "num_features": _names(q.num_features, schema),
            "thresholds": list(q.thresholds),
            "strict": q.strict,
        }
    return {"type": "halfspace", "theta": [float(t) for t in q.theta], "tau": float(q.tau)}


def workloads_to_document(workloads: typing.Sequence[Workload], schema: DomainSchema) -> dict:
    return {
        "schema_digest": schema.digest(),
        "workloads": [
            {
                "name": w.name,
                "kind": w.kind.value,
                "levels": w.levels,
                "l2_sensitivity": w.l2_sensitivity,
                "queries": [query_to_document(q, schema) for q in w.queries],
            }
            for w in workloads
        ],
    }


class _Fields:
    """Typed access to a manifest object that names the offending field on failure."""

    def __init__(self, document, where: str):
        if not isinstance(document, dict):
            raise IngestionError(f"Manifest field {where} must be an object")
        self.document = document
        self.where = where

    def get(self, key: str, kind, default=dataclasses.MISSING):
        if key not in self.document:
            if default is not dataclasses.MISSING:
                return default
            raise IngestionError(f"Manifest field {self.where}.{key} is missing")
        value = self.document[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
            raise IngestionError(f"Manifest field {self.where}.{key} has the wrong type")
        return value

    def numbers(self, key: str, kind) -> tuple:
        items = self.get(key, list, [])
        out = []
        for i, value in enumerate(items):
            if kind is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, kind) or isinstance(value, bool):
                raise IngestionError(f"Manifest field {self.where}.{key}[{i}] has the wrong type")
            out.append(value)
        return tuple(out)

    def features(self, key: str, schema: DomainSchema) -> tuple:
        names = self.get(key, list, [])
        try:
            return tuple(schema.index(name) for name in names)
        except ParameterError as err:
            raise IngestionError(f"Manifest field {self.where}.{key}: {err}") from err


def query_from_document(document, schema: DomainSchema, where: str) -> Query:
    fields = _Fields(document, where)
    kind = fields.get("type", str)
    if kind == "categorical_marginal":
        q = CategoricalMarginal(fields.features("features", schema), fields.numbers("values", int))
    elif kind == "range_marginal":
        intervals = []
        for i, pair in enumerate(fields.get("intervals", list)):
            if (
                not isinstance(pair, list)
                or len(pair) != 2
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in pair)
            ):
                raise IngestionError(f"Manifest field {where}.intervals[{i}] must be a number pair")
            intervals.append((float(pair[0]), float(pair[1])))
        closed = fields.get("upper_closed", list, [])
        if not all(isinstance(c, bool) for c in closed):
            raise IngestionError(f"Manifest field {where}.upper_closed must hold booleans")
        q = RangeMarginal(
            fields.features("cat_features", schema),
            fields.numbers("cat_values", int),
            fields.features("num_features", schema),
            tuple(intervals),
            tuple(closed),
        )
    elif kind == "prefix":
        q = Prefix(
            fields.features("num_features", schema),
            fields.numbers("thresholds", float),
            fields.features("cat_features", schema),
            fields.numbers("cat_values", int),
            fields.get("strict", bool, False),
        )
    elif kind == "halfspace":
        q = Halfspace(np.array(fields.numbers("theta", float)), fields.get("tau", float))
    else:
        raise IngestionError(f"Manifest field {where}.type has unknown value {kind!r}")
    try:
        validate_query(q, schema)
    except ParameterError as err:
        raise IngestionError(f"Manifest field {where}: {err}") from err
    return q


def workloads_from_document(document, schema: DomainSchema) -> typing.List[Workload]:
    top = _Fields(document, "manifest")
    workloads = []
    for i, entry in enumerate(top.get("workloads", list)):
        where = f"workloads[{i}]"
        fields = _Fields(entry, where)
        try:
            kind = WorkloadKind(fields.get("kind", str))
        except ValueError as err:
            raise IngestionError(f"Manifest field {where}.kind has an unknown value") from err
        levels = fields.document.get("levels")
        if levels is not None and (not isinstance(levels, int) or isinstance(levels, bool)):
            raise IngestionError(f"Manifest field {where}.levels must be an integer")
        queries = tuple(
            query_from_document(q, schema, f"{where}.queries[{j}]")
            for j, q in enumerate(fields.get("queries", list))
        )
        sensitivity = fields.get("l2_sensitivity", float)
        if not sensitivity > 0:
            raise IngestionError(f"Manifest field {where}.l2_sensitivity must be positive")
        workloads.append(Workload(fields.get("name", str), queries, sensitivity, kind, levels))
    return workloads


def save_workload_manifest(
    workloads: typing.Sequence[Workload], schema: DomainSchema, path: pathlib.Path
) -> str:
    """Write the manifest and return its digest."""
    text = common.canonical_json(workloads_to_document(workloads, schema))
    path.write_text(text, encoding="utf-8")
    return common.digest_text(text)


def load_workload_manifest(path: pathlib.Path, schema: DomainSchema) -> typing.List[Workload]:
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise IngestionError(f"Workload manifest {path} is not valid JSON: {err}") from err
    return workloads_from_document(document, schema)


def _int_param(family: str, params: typing.Dict[str, str], key: str, default=None) -> int:
    if key not in params:
        if default is None:
            raise ParameterError(f"Query family {family!r} needs parameter {key!r}")
        return default
    try:
        return int(params[key])
    except ValueError as err:
        raise ParameterError(f"{family}: {key} must be an integer, got {params[key]!r}") from err


_FAMILIES = {
    "cat-marginals": {"k"},
    "binary-tree": {"k", "levels"},
    "prefixes": {"m"},
    "halfspaces": {"m"},
}


def parse_query_spec(spec: str, schema: DomainSchema, rng: np.random.Generator) -> typing.List[Workload]:
    """Build workloads from a spec such as 'cat-marginals:k=2+prefixes:m=1000'."""
    workloads = []
    for part in spec.split("+"):
        family, _, raw = part.strip().partition(":")
        if family not in _FAMILIES:
            raise ParameterError(f"Unknown query family {family!r}")
        params = {}
        for item in filter(None, raw.split(",")):
            key, sep, value = item.partition("=")
            key = key.strip()
            if not sep or key not in _FAMILIES[family]:
                raise ParameterError(f"Unknown parameter {item!r} for query family {family!r}")
            params[key] = value.strip()
        if family == "cat-marginals":
            workloads.extend(gen_categorical_marginal_workloads(schema, _int_param(family, params, "k", 2)))
        elif family == "binary-tree":
            workloads.extend(
                gen_binary_tree_workloads(
                    schema,
                    _int_param(family, params, "k", 2),
                    _int_param(family, params, "levels", DEFAULT_LEVELS),
                )
            )
        elif family == "prefixes":
            workloads.append(gen_random_prefixes(schema, _int_param(family, params, "m"), rng))
        else:
            workloads.append(gen_random_halfspaces(schema, _int_param(family, params, "m"), rng))
    return workloads
