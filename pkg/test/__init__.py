import os
import pathlib
import shutil
import subprocess
import sys
import unittest

import numpy as np

from gsdsynth import dataset
from gsdsynth.dataset import Attribute, Dataset, DomainSchema

TEST_DIRECTORY = pathlib.Path("test_data")
TEST_SCHEMA_FILE = TEST_DIRECTORY / "schema.json"
TEST_DATA_FILE = TEST_DIRECTORY / "data.csv"
TEST_OUT_DIRECTORY = TEST_DIRECTORY / "out"

# every 2-way marginal of this dataset is uniform
FIXED_ROWS = [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0)]


def binary_schema(d: int = 3, cardinality: int = 2) -> DomainSchema:
    return DomainSchema(
        tuple(Attribute.categorical(f"c{i}", cardinality) for i in range(d))
    )


def fixed_dataset() -> Dataset:
    return Dataset(binary_schema(), FIXED_ROWS)


def mixed_schema() -> DomainSchema:
    return DomainSchema(
        (
            Attribute.categorical("color", ["red", "green", "blue"]),
            Attribute.categorical("flag", ["no", "yes"]),
            Attribute.numeric("age"),
            Attribute.numeric("income"),
        )
    )


def random_mixed_dataset(n_rows: int = 50, seed: int = 0) -> Dataset:
    return dataset.random_dataset(mixed_schema(), n_rows, np.random.default_rng(seed))


def write_mixed_files(n_rows: int = 40, seed: int = 0):
    rng = np.random.default_rng(seed)
    schema = mixed_schema()
    lines = ["color,flag,age,income"]
    for _ in range(n_rows):
        lines.append(
            "{},{},{},{:.2f}".format(
                schema.attributes[0].categories[rng.integers(3)],
                schema.attributes[1].categories[rng.integers(2)],
                int(rng.integers(18, 90)),
                float(rng.uniform(1000, 90000)),
            )
        )
    TEST_DATA_FILE.write_text("\n".join(lines) + "\n")
    dataset.save_schema(schema, TEST_SCHEMA_FILE)


def write_binary_files():
    lines = ["c0,c1,c2"] + [",".join(str(v) for v in row) for row in FIXED_ROWS * 5]
    TEST_DATA_FILE.write_text("\n".join(lines) + "\n")
    dataset.save_schema(binary_schema(), TEST_SCHEMA_FILE)


def setup_test_files():
    shutil.rmtree(TEST_DIRECTORY, ignore_errors=True)
    TEST_DIRECTORY.mkdir(parents=True)


def run_command(module: str, *args: str, env=None) -> subprocess.CompletedProcess:
    environment = dict(os.environ)
    environment.pop("GSD_DEBUG", None)
    if env:
        environment.update(env)
    return subprocess.run(
        [sys.executable, "-m", module, *args],
        capture_output=True,
        text=True,
        env=environment,
    )


class BaseTestCase(unittest.TestCase):
    def setUp(self) -> None:
        setup_test_files()
