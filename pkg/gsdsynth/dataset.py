"""Domain schemas, the dataset container and CSV ingestion.

Categorical cells hold category indices, numeric cells hold reals in
[0, 1]. Both are stored in one float64 matrix with one column per
attribute.
"""
import dataclasses
import enum
import json
import logging
import math
import pathlib
import typing

import numpy as np
import pandas as pd

from gsdsynth import common
from gsdsynth.common import IngestionError, ParameterError

log = logging.getLogger(__name__)

Ranges = typing.Dict[str, typing.Tuple[float, float]]

# Slack allowed when re-normalizing values written with 9 significant digits.
NORMALIZATION_SLACK = 1e-8


class AttributeKind(enum.Enum):
    CATEGORICAL = "categorical"
    NUMERIC = "numeric"


@dataclasses.dataclass(frozen=True)
class Attribute:
    name: str
    kind: AttributeKind
    categories: typing.Tuple[str, ...] = ()
    minimum: typing.Optional[float] = None
    maximum: typing.Optional[float] = None

    @classmethod
    def categorical(cls, name: str, categories: typing.Union[int, typing.Sequence]) -> "Attribute":
        if isinstance(categories, int):
            categories = range(categories)
        return cls(name, AttributeKind.CATEGORICAL, tuple(str(c) for c in categories))

    @classmethod
    def numeric(
        cls, name: str, minimum: typing.Optional[float] = None, maximum: typing.Optional[float] = None
    ) -> "Attribute":
        return cls(name, AttributeKind.NUMERIC, (), minimum, maximum)

    @property
    def is_categorical(self) -> bool:
        return self.kind is AttributeKind.CATEGORICAL

    @property
    def cardinality(self) -> int:
        """Number of categories, 0 for numeric attributes."""
        return len(self.categories)

    def to_document(self) -> dict:
        if self.is_categorical:
            return {"name": self.name, "kind": self.kind.value, "categories": list(self.categories)}
        document = {"name": self.name, "kind": self.kind.value}
        if self.minimum is not None:
            document["min"] = self.minimum
        if self.maximum is not None:
            document["max"] = self.maximum
        return document


@dataclasses.dataclass(frozen=True)
class DomainSchema:
    attributes: typing.Tuple[Attribute, ...]

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not self.attributes:
            raise ParameterError("A schema needs at least one attribute")
        seen = set()
        for attribute in self.attributes:
            if attribute.name in seen:
                raise ParameterError(f"Duplicate attribute name {attribute.name!r}")
            seen.add(attribute.name)
            if attribute.is_categorical:
                if attribute.cardinality < 2:
                    raise ParameterError(
                        f"Categorical attribute {attribute.name!r} needs at least 2 categories"
                    )
                if len(set(attribute.categories)) != attribute.cardinality:
                    raise ParameterError(f"Attribute {attribute.name!r} repeats a category")
            elif (
                attribute.minimum is not None
                and attribute.maximum is not None
                and attribute.minimum > attribute.maximum
            ):
                raise ParameterError(f"Attribute {attribute.name!r} has min greater than max")

    def __len__(self):
        return len(self.attributes)

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    @property
    def names(self) -> typing.List[str]:
        return [a.name for a in self.attributes]

    def index(self, name: str) -> int:
        for i, attribute in enumerate(self.attributes):
            if attribute.name == name:
                return i
        raise ParameterError(f"Unknown attribute {name!r}")

    @property
    def categorical_indices(self) -> typing.List[int]:
        return [i for i, a in enumerate(self.attributes) if a.is_categorical]

    @property
    def numeric_indices(self) -> typing.List[int]:
        return [i for i, a in enumerate(self.attributes) if not a.is_categorical]

    @property
    def cardinalities(self) -> np.ndarray:
        return np.array([a.cardinality for a in self.attributes], dtype=np.int64)

    @property
    def one_hot_dim(self) -> int:
        return sum(a.cardinality if a.is_categorical else 1 for a in self.attributes)

    @property
    def one_hot_offsets(self) -> typing.List[int]:
        offsets = []
        position = 0
        for attribute in self.attributes:
            offsets.append(position)
            position += attribute.cardinality if attribute.is_categorical else 1
        return offsets

    @property
    def domain_size(self) -> int:
        if self.numeric_indices:
            raise common.UnsupportedError("Numeric attributes have an infinite domain")
        return math.prod(a.cardinality for a in self.attributes)

    def to_document(self) -> dict:
        return {"attributes": [a.to_document() for a in self.attributes]}

    def digest(self) -> str:
        return common.digest_document(self.to_document())

    @classmethod
    def from_document(cls, document) -> "DomainSchema":
        if not isinstance(document, dict) or not isinstance(document.get("attributes"), list):
            raise IngestionError("Schema field 'attributes' must be a list")
        attributes = []
        for i, entry in enumerate(document["attributes"]):
            where = f"attributes[{i}]"
            if not isinstance(entry, dict):
                raise IngestionError(f"Schema field {where} must be an object")
            name = entry.get("name")
            if not isinstance(name, str) or not name:
                raise IngestionError(f"Schema field {where}.name must be a non-empty string")
            kind = entry.get("kind")
            if kind == AttributeKind.CATEGORICAL.value:
                categories = entry.get("categories")
                if not isinstance(categories, list):
                    raise IngestionError(f"Schema field {where}.categories must be a list")
                attributes.append(Attribute.categorical(name, categories))
            elif kind == AttributeKind.NUMERIC.value:
                bounds = []
                for key in ("min", "max"):
                    value = entry.get(key)
                    if value is not None and not isinstance(value, (int, float)):
                        raise IngestionError(f"Schema field {where}.{key} must be a number")
                    bounds.append(None if value is None else float(value))
                attributes.append(Attribute.numeric(name, *bounds))
            else:
                raise IngestionError(
                    f"Schema field {where}.kind must be 'categorical' or 'numeric', got {kind!r}"
                )
        try:
            return cls(tuple(attributes))
        except ParameterError as err:
            raise IngestionError(f"Invalid schema: {err}") from err


def load_schema(path: pathlib.Path) -> DomainSchema:
    with path.open("r", encoding="utf-8") as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as err:
            raise IngestionError(f"Schema {path} is not valid JSON: {err}") from err
    return DomainSchema.from_document(document)


def save_schema(schema: DomainSchema, path: pathlib.Path):
    path.write_text(common.canonical_json(schema.to_document()), encoding="utf-8")


class Dataset:
    """An immutable N x d table over a schema."""

    def __init__(self, schema: DomainSchema, values, check: bool = True):
        values = np.array(values, dtype=np.float64)
        if values.ndim == 1 and schema.n_attributes == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[1] != schema.n_attributes:
            raise ParameterError(
                f"Expected a table with {schema.n_attributes} columns, got shape {values.shape}"
            )
        if values.shape[0] < 1:
            raise ParameterError("A dataset needs at least one row")
        values.setflags(write=False)
        self._schema = schema
        self._values = values
        if check:
            validate(self)

    @property
    def schema(self) -> DomainSchema:
        return self._schema

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def n_rows(self) -> int:
        return self._values.shape[0]

    def __len__(self):
        return self.n_rows

    def column(self, j: int) -> np.ndarray:
        column = self._values[:, j]
        if self._schema.attributes[j].is_categorical:
            return column.astype(np.int64)
        return column

    def row(self, i: int) -> tuple:
        return tuple(
            int(v) if a.is_categorical else float(v)
            for v, a in zip(self._values[i], self._schema.attributes)
        )

    def one_hot_matrix(self) -> np.ndarray:
        return one_hot_matrix(self._values, self._schema)

    def with_values(self, values) -> "Dataset":
        return Dataset(self._schema, values)

    def equals(self, other: "Dataset", atol: float = 0.0) -> bool:
        return (
            self._schema == other.schema
            and self._values.shape == other.values.shape
            and bool(np.allclose(self._values, other.values, rtol=0.0, atol=atol))
        )

    def __repr__(self):
        return f"Dataset(rows={self.n_rows}, attributes={self._schema.names})"


def validate(dataset: Dataset):
    values = dataset.values
    for j, attribute in enumerate(dataset.schema.attributes):
        column = values[:, j]
        if attribute.is_categorical:
            bad = ~(
                np.isfinite(column)
                & (column == np.floor(column))
                & (column >= 0)
                & (column < attribute.cardinality)
            )
        else:
            bad = ~(np.isfinite(column) & (column >= 0) & (column <= 1))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ParameterError(
                f"Row {i}, column {attribute.name!r}: value {column[i]!r} is outside the domain"
            )


def random_values(schema: DomainSchema, n_rows: int, rng: np.random.Generator) -> np.ndarray:
    values = np.empty((n_rows, schema.n_attributes), dtype=np.float64)
    for j, attribute in enumerate(schema.attributes):
        if attribute.is_categorical:
            values[:, j] = rng.integers(0, attribute.cardinality, size=n_rows)
        else:
            values[:, j] = rng.random(n_rows)
    return values


def random_dataset(schema: DomainSchema, n_rows: int, rng: np.random.Generator) -> Dataset:
    if n_rows < 1:
        raise ParameterError(f"n_rows must be at least 1, got {n_rows}")
    return Dataset(schema, random_values(schema, n_rows, rng), check=False)


def one_hot_matrix(values: np.ndarray, schema: DomainSchema) -> np.ndarray:
    n = values.shape[0]
    encoded = np.zeros((n, schema.one_hot_dim), dtype=np.float64)
    rows = np.arange(n)
    for j, (attribute, offset) in enumerate(zip(schema.attributes, schema.one_hot_offsets)):
        if attribute.is_categorical:
            encoded[rows, offset + values[:, j].astype(np.int64)] = 1.0
        else:
            encoded[:, offset] = values[:, j]
    return encoded


def one_hot(row, schema: DomainSchema) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64).reshape(1, -1)
    return one_hot_matrix(row, schema)[0]


def load_csv(
    path: pathlib.Path,
    schema: DomainSchema,
    normalize: bool = True,
    ranges: typing.Optional[Ranges] = None,
) -> typing.Tuple[Dataset, Ranges]:
    """Read a CSV file into a Dataset.

    Numeric columns are mapped to [0, 1] using, in order of preference,
    the ranges argument, the range declared in the schema, or the observed
    min and max. The ranges applied are returned alongside the dataset.
    Without normalize, numeric cells must already lie in [0, 1].
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as err:
        raise IngestionError(f"{path} is empty") from err
    if frame.shape[0] == 0:
        raise IngestionError(f"{path} has no data rows")
    values = np.empty((frame.shape[0], schema.n_attributes), dtype=np.float64)
    applied: Ranges = {}
    for j, attribute in enumerate(schema.attributes):
        if attribute.name not in frame.columns:
            raise IngestionError(f"{path}: missing column {attribute.name!r}")
        cells = frame[attribute.name].str.strip()
        if attribute.is_categorical:
            codes = cells.map({c: k for k, c in enumerate(attribute.categories)})
            unknown = codes.isna().to_numpy()
            if unknown.any():
                i = int(np.flatnonzero(unknown)[0])
                raise IngestionError(
                    f"{path}: row {i + 1}, column {attribute.name!r}: "
                    f"unknown category {cells.iloc[i]!r}"
                )
            values[:, j] = codes.to_numpy(dtype=np.float64)
            continue
        numbers = pd.to_numeric(cells, errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(numbers)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise IngestionError(
                f"{path}: row {i + 1}, column {attribute.name!r}: "
                f"{cells.iloc[i]!r} is not a number"
            )
        if normalize:
            lo, hi = _column_range(attribute, numbers, ranges)
            applied[attribute.name] = (lo, hi)
            numbers = _normalize(numbers, lo, hi)
        else:
            applied[attribute.name] = (0.0, 1.0)
        outside = (numbers < 0) | (numbers > 1)
        if outside.any():
            i = int(np.flatnonzero(outside)[0])
            raise IngestionError(
                f"{path}: row {i + 1}, column {attribute.name!r}: "
                f"{cells.iloc[i]!r} is outside the column range"
            )
        values[:, j] = numbers
    log.debug("loaded %d rows from %s", values.shape[0], path)
    return Dataset(schema, values), applied


def _column_range(
    attribute: Attribute, numbers: np.ndarray, ranges: typing.Optional[Ranges]
) -> typing.Tuple[float, float]:
    if ranges is not None and attribute.name in ranges:
        lo, hi = ranges[attribute.name]
        return float(lo), float(hi)
    lo = attribute.minimum if attribute.minimum is not None else float(numbers.min())
    hi = attribute.maximum if attribute.maximum is not None else float(numbers.max())
    return lo, hi


def _normalize(numbers: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.where(numbers == lo, 0.0, np.inf)
    scaled = (numbers - lo) / (hi - lo)
    # undo rounding from values serialized with 9 significant digits
    snapped = np.clip(scaled, 0.0, 1.0)
    close = np.abs(scaled - snapped) <= NORMALIZATION_SLACK
    return np.where(close, snapped, scaled)


def save_csv(dataset: Dataset, path: pathlib.Path, denormalize_params: typing.Optional[Ranges] = None):
    columns = {}
    for j, attribute in enumerate(dataset.schema.attributes):
        column = dataset.values[:, j]
        if attribute.is_categorical:
            labels = np.array(attribute.categories, dtype=object)
            columns[attribute.name] = labels[column.astype(np.int64)]
        else:
            if denormalize_params is not None and attribute.name in denormalize_params:
                lo, hi = denormalize_params[attribute.name]
                column = column * (hi - lo) + lo
            columns[attribute.name] = column
    frame = pd.DataFrame(columns, columns=dataset.schema.names)
    frame.to_csv(
        path, index=False, float_format=common.NUMERIC_FORMAT, lineterminator="\n", encoding="utf-8"
    )
