import dataclasses
import enum
import hashlib
import json
import logging
import os
import pathlib
import shutil
import sys
import typing
from os import access, R_OK, W_OK

import psutil

if "GSD_DEBUG" in os.environ:
    DEBUG = True
else:
    DEBUG = False

WORKERS_ENV = "GSD_WORKERS"
SYNTHETIC_FILE_NAME = "synthetic.csv"
MANIFEST_FILE_NAME = "manifest.json"
WORKLOAD_MANIFEST_FILE_NAME = "workloads.json"
TRACE_FILE_NAME = "trace.jsonl"
LEDGER_FILE_NAME = "ledger.txt"
LEDGER_CHECKSUM_FILE_NAME = "ledger_checksum.txt"
NUMERIC_FORMAT = "%.9g"  # 9 significant digits
QUERY_SEED_STREAM = 0x71756572

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

log = logging.getLogger("gsdsynth")


class GSDError(Exception):
    pass


class ParameterError(GSDError):
    pass


class IngestionError(GSDError):
    pass


class BudgetError(GSDError):
    pass


class CapacityError(GSDError):
    pass


class UnsupportedError(GSDError):
    pass


class UsageError(GSDError):
    pass


class FileValidation(enum.Enum):
    FILE_DOESNT_EXIST = enum.auto()
    DIRECTORY_DOESNT_EXIST = enum.auto()
    IS_DIRECTORY = enum.auto()
    NO_WRITE_PERMISSION_FILE = enum.auto()
    NO_WRITE_PERMISSION_DIRECTORY = enum.auto()
    NO_READ_PERMISSION_FILE = enum.auto()
    NOT_A_FILE = enum.auto()


def setup_logging(level: typing.Optional[int] = None):
    if level is None:
        level = logging.DEBUG if DEBUG else logging.INFO
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(
            logging.Formatter("%(asctime)s %(name)s %(levelname)s: %(message)s")
        )
        log.addHandler(handler)
    log.setLevel(level)


def default_workers() -> int:
    """Worker threads used for query evaluation when no flag says otherwise."""
    if WORKERS_ENV in os.environ:
        try:
            workers = int(os.environ[WORKERS_ENV])
        except ValueError as err:
            raise ParameterError(
                f"{WORKERS_ENV} must be an integer, got {os.environ[WORKERS_ENV]!r}"
            ) from err
        if workers < 1:
            raise ParameterError(f"{WORKERS_ENV} must be at least 1")
        return workers
    return psutil.cpu_count(logical=False) or 1


def error(msg: str, status: int = EXIT_RUNTIME) -> int:
    print(msg, file=sys.stderr)
    return status


def describe(err: Exception) -> str:
    if isinstance(err, GSDError) and err.args:
        return str(err.args[0])
    return str(err)


def digest_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def digest_document(document) -> str:
    return digest_text(canonical_json(document))


def canonical_json(document) -> str:
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def get_file_checksum(source: pathlib.Path) -> str:
    checksum = hashlib.sha256()
    with source.open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            checksum.update(chunk)
    return checksum.hexdigest()


def file_ok(path: pathlib.Path, source=True) -> None:
    """Test for the usefulness of path.

    If source is true the path must exist, be a file and readable.

    If source is False, will test if it's a directory and writable
    or a path that sits in a directory that's writable.

    In case any test fails this function will throw a GSDError with the
    reason.
    """
    if source:
        if not path.exists():
            raise GSDError(f"File {path} does not exist", FileValidation.FILE_DOESNT_EXIST)
        if path.is_dir():
            raise GSDError(f"{path} is a directory", FileValidation.IS_DIRECTORY)
        if not path.is_file():
            raise GSDError(f"Path {path} does not point to a file", FileValidation.NOT_A_FILE)
        if not access(path, R_OK):
            raise GSDError(
                f"File {path} is not readable", FileValidation.NO_READ_PERMISSION_FILE
            )
    else:
        if not path.exists():
            if not path.parent.exists():
                raise GSDError(
                    f"Directory {path.parent} does not exist",
                    FileValidation.DIRECTORY_DOESNT_EXIST,
                )
            elif not access(path.parent, W_OK):
                raise GSDError(
                    f"Cannot write to parent of {path}",
                    FileValidation.NO_WRITE_PERMISSION_DIRECTORY,
                )
        elif not access(path, W_OK):
            raise GSDError(
                f"File {path} is not writable", FileValidation.NO_WRITE_PERMISSION_FILE
            )


def remove_file(path: pathlib.Path):
    try:
        os.remove(path)
    except IsADirectoryError:
        shutil.rmtree(path, ignore_errors=True)
    except FileNotFoundError:
        pass


@dataclasses.dataclass(frozen=True)
class LedgerRecord:
    """One spend of the privacy ledger as stored in the ledger report."""

    sequence: int
    label: str
    rho: float
    cumulative_rho: float
    total_rho: float
    version: int = 1

    def write(self, ledger_path: pathlib.Path):
        with ledger_path.open("at") as f:
            f.write("Item\n")
            f.write(f"Version: {self.version}\n")
            f.write(f"Sequence: {self.sequence}\n")
            f.write(f"Label: {self.label}\n")
            f.write(f"Rho: {self.rho!r}\n")
            f.write(f"Cumulative-Rho: {self.cumulative_rho!r}\n")
            f.write(f"Total-Rho: {self.total_rho!r}\n")

    def __str__(self):
        return f"{self.label}: rho={self.rho:.6g}"


def write_ledger_records(
    records: typing.Iterable[LedgerRecord],
    ledger_path: pathlib.Path,
    checksum_path: pathlib.Path,
):
    remove_file(ledger_path)
    ledger_path.touch()
    for record in records:
        record.write(ledger_path)
    checksum_path.write_text(f"{get_file_checksum(ledger_path)}  {ledger_path.name}\n")


def check_ledger_checksum(ledger_path: pathlib.Path, checksum_path: pathlib.Path):
    if not checksum_path.exists() or checksum_path.stat().st_size == 0:
        raise FileNotFoundError(f"Ledger checksum file {checksum_path} not found or empty")
    expected = checksum_path.read_text().split()[0]
    if expected != get_file_checksum(ledger_path):
        raise GSDError(
            f"The ledger {ledger_path} doesn't match the checksum stored in {checksum_path}."
        )


def read_ledger_records(ledger_path: pathlib.Path) -> typing.Iterator[LedgerRecord]:
    fields: typing.Dict[str, str] = {}

    def build() -> LedgerRecord:
        try:
            return LedgerRecord(
                sequence=int(fields["Sequence:"]),
                label=fields["Label:"],
                rho=float(fields["Rho:"]),
                cumulative_rho=float(fields["Cumulative-Rho:"]),
                total_rho=float(fields["Total-Rho:"]),
                version=int(fields["Version:"]),
            )
        except KeyError as err:
            raise IngestionError(f"Ledger {ledger_path} item is missing {err.args[0]}") from err
        except ValueError as err:
            raise IngestionError(f"Ledger {ledger_path} has a malformed item: {err}") from err

    first_item = True
    with ledger_path.open("r") as ledger:
        for line in ledger:
            line = line.strip()
            if not line:
                continue
            parts = line.split(" ", 1)
            if parts[0] == "Item":
                if first_item:
                    first_item = False
                else:
                    yield build()
                fields = {}
            elif len(parts) == 2:
                fields[parts[0]] = parts[1]
    if not first_item:
        yield build()
